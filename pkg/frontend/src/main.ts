import { startApp } from "./app.js";

const params = new URLSearchParams(window.location.search);
const baseUrl = params.get("api") ?? "http://127.0.0.1:8077";
startApp(document, baseUrl);
