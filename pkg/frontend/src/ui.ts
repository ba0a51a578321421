/** DOM rendering and event wiring; state in, HTTP-producing actions out. */

import { ApiClient } from "./api.js";
import { Recorder } from "./audio.js";
import { ChatController } from "./controller.js";
import { Store } from "./store.js";
import { MODES, Mode, UiState } from "./types.js";

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

export function mount(
  root: HTMLElement,
  store: Store,
  controller: ChatController,
  api: ApiClient,
): void {
  root.innerHTML = "";

  const banner = el("div", "banner hidden");
  const notice = el("div", "notice hidden");
  const history = el("div", "history");

  const modeSelect = el("select", "mode");
  for (const mode of MODES) {
    const option = el("option", undefined, mode);
    option.value = mode;
    modeSelect.appendChild(option);
  }
  modeSelect.onchange = () => controller.setMode(modeSelect.value as Mode);

  const input = el("textarea", "input");
  input.placeholder = "Type a message (URL for summarize_url, prompt otherwise)";
  const sendButton = el("button", "send", "Send");
  const fileInput = el("input", "file") as HTMLInputElement;
  fileInput.type = "file";
  const progress = el("progress", "upload-progress hidden") as HTMLProgressElement;
  progress.max = 100;
  const recordButton = el("button", "record", "Record");
  const recorder = new Recorder();

  const pendingImageRef = { ref: null as string | null };

  async function send() {
    const content = input.value.trim();
    const state = store.get();
    const attachments =
      state.selectedMode === "image_understand" && pendingImageRef.ref
        ? [{ kind: "image" as const, ref: pendingImageRef.ref }]
        : [];
    if (!content && attachments.length === 0) return;
    input.value = "";
    await controller.sendMessage(content, attachments);
  }

  sendButton.onclick = () => void send();
  input.onkeydown = (event) => {
    if (event.key === "Enter" && !event.shiftKey) {
      event.preventDefault();
      void send();
    }
  };

  fileInput.onchange = () => {
    const file = fileInput.files?.[0];
    if (!file) return;
    fileInput.value = "";
    if (store.get().selectedMode === "image_understand") {
      // image attachments ride along with the next message
      const reader = new FileReader();
      reader.onload = () => {
        pendingImageRef.ref = String(reader.result);
        notice.textContent = `attached ${file.name}`;
        notice.classList.remove("hidden");
      };
      reader.readAsDataURL(file);
      return;
    }
    void controller.upload(file, file.name);
  };

  recordButton.onclick = async () => {
    if (!recorder.active) {
      recordButton.textContent = "Stop";
      await recorder.start();
      return;
    }
    recordButton.textContent = "Record";
    const { samplingRate, samples } = await recorder.stop();
    if (!samples.length) return;
    const transcript = await controller.transcribe(samplingRate, samples);
    if (transcript !== null) {
      // insert at the end of the input box, cursor after the insertion
      input.value = input.value + transcript;
      input.focus();
      input.selectionStart = input.selectionEnd = input.value.length;
    }
  };

  function render(state: UiState) {
    banner.classList.toggle("hidden", state.errorBanner === null);
    banner.textContent = state.errorBanner ?? "";
    notice.classList.toggle("hidden", state.notice === null);
    if (state.notice !== null) notice.textContent = state.notice;
    progress.classList.toggle("hidden", state.uploadProgress === null);
    if (state.uploadProgress !== null) progress.value = state.uploadProgress;
    sendButton.disabled = state.pending;
    modeSelect.value = state.selectedMode;

    history.innerHTML = "";
    for (const turn of state.turns) {
      const bubble = el("div", `bubble ${turn.role}`);
      bubble.appendChild(el("div", "meta", `${turn.role} · ${turn.mode}`));
      if (turn.content) bubble.appendChild(el("div", "text", turn.content));
      for (const attachment of turn.attachments) {
        if (attachment.kind === "image") {
          const img = el("img", "attachment") as HTMLImageElement;
          img.src = api.fileUrl(attachment.ref);
          bubble.appendChild(img);
        } else {
          bubble.appendChild(el("div", "attachment", attachment.ref));
        }
      }
      history.appendChild(bubble);
    }
    history.scrollTop = history.scrollHeight;
  }

  const controls = el("div", "controls");
  controls.append(modeSelect, fileInput, progress, recordButton);
  const composer = el("div", "composer");
  composer.append(input, sendButton);
  root.append(banner, notice, history, controls, composer);
  store.subscribe(render);
}
