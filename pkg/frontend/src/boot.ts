import { setupApp } from "./main.js";

setupApp();
