import { defaultPlayer } from "./audio";
import { startApp } from "./ui";

const root = document.getElementById("app");
if (root === null) {
  throw new Error("missing #app mount point");
}

startApp({ root, player: defaultPlayer() }).catch((err) => {
  root.textContent = `failed to start: ${err instanceof Error ? err.message : String(err)}`;
});
