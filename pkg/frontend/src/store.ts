/** Minimal observable state container; the UI re-renders on every change. */

import { UiState, initialState } from "./types.js";

export type Listener = (state: UiState) => void;

export class Store {
  private state: UiState = { ...initialState };
  private listeners: Listener[] = [];

  get(): UiState {
    return this.state;
  }

  update(mutate: (state: UiState) => UiState): void {
    this.state = mutate(this.state);
    for (const listener of this.listeners) {
      listener(this.state);
    }
  }

  subscribe(listener: Listener): () => void {
    this.listeners.push(listener);
    listener(this.state);
    return () => {
      this.listeners = this.listeners.filter((l) => l !== listener);
    };
  }
}
