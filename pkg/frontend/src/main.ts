import { ApiClient } from "./api.js";
import { ChatController } from "./controller.js";
import { Store } from "./store.js";
import { mount } from "./ui.js";

const api = new ApiClient("");
const store = new Store();
const controller = new ChatController(api, store);

const root = document.getElementById("app");
if (!root) throw new Error("missing #app container");
mount(root, store, controller, api);
void controller.init();
