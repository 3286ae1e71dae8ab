import { ApiClient } from "./api.js";
import { App } from "./app.js";
import { PAGE_BODY } from "./page.js";

document.body.innerHTML = PAGE_BODY;
const app = new App(document, new ApiClient());
void app.start();
