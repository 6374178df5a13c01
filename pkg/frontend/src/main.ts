import { GatewayClient } from "./api.js";
import { mountChatView } from "./ui.js";

/* --- bootstrap --- */

// The identity assertion comes from whatever auth layer fronts the page.
// For local development set it on the window before this script runs.
const client = new GatewayClient({
  baseUrl: (window as any).CHATGATE_BASE_URL ?? "",
  assertion: () => (window as any).CHATGATE_ASSERTION ?? "",
});

const root = document.getElementById("app");
if (root) {
  mountChatView(root, client);
}
