import { RemixerClient } from "./api.js";
import { MixingConsole } from "./console.js";
import { AbPlayer, WebAudioSink } from "./player.js";

const SERVICE_URL =
  new URLSearchParams(window.location.search).get("service") ?? "http://127.0.0.1:8080";

const root = document.getElementById("app");
if (!root) throw new Error("missing #app container");

const client = new RemixerClient(SERVICE_URL);
const player = new AbPlayer(new WebAudioSink());
new MixingConsole(root, client, player);
