import { beforeEach, describe, expect, it } from "vitest";

import { KeyActions, KeyEventLike, bindKeys, keyHandler } from "../src/keyboard.js";

let calls: string[];
let actions: KeyActions;

beforeEach(() => {
  calls = [];
  actions = {
    confirm: () => calls.push("confirm"),
    reject: () => calls.push("reject"),
    next: () => calls.push("next"),
    prev: () => calls.push("prev"),
    play: () => calls.push("play"),
    refresh: () => calls.push("refresh"),
  };
});

function key(k: string, extra: Partial<KeyEventLike> = {}): KeyEventLike & { prevented: boolean } {
  const event = {
    key: k,
    prevented: false,
    preventDefault() {
      event.prevented = true;
    },
    ...extra,
  };
  return event as KeyEventLike & { prevented: boolean };
}

describe("keyHandler", () => {
  it.each([
    ["y", "confirm"],
    ["n", "reject"],
    ["j", "next"],
    ["ArrowRight", "next"],
    ["k", "prev"],
    ["ArrowLeft", "prev"],
    [" ", "play"],
    ["p", "play"],
    ["r", "refresh"],
  ])("maps %j to %s", (k, action) => {
    const handler = keyHandler(actions);
    const event = key(k);
    handler(event);
    expect(calls).toEqual([action]);
    expect(event.prevented).toBe(true);
  });

  it("fires one action per physical keypress, ignoring auto-repeat", () => {
    const handler = keyHandler(actions);
    handler(key("y"));
    handler(key("y", { repeat: true }));
    handler(key("y", { repeat: true }));
    expect(calls).toEqual(["confirm"]);
  });

  it("ignores keys aimed at form fields", () => {
    const handler = keyHandler(actions);
    handler(key("y", { target: { tagName: "INPUT" } }));
    handler(key("y", { target: { tagName: "TEXTAREA" } }));
    expect(calls).toEqual([]);
    handler(key("y", { target: { tagName: "DIV" } }));
    expect(calls).toEqual(["confirm"]);
  });

  it("leaves unmapped keys alone", () => {
    const handler = keyHandler(actions);
    const event = key("q");
    handler(event);
    expect(calls).toEqual([]);
    expect(event.prevented).toBe(false);
  });
});

describe("bindKeys", () => {
  it("attaches the handler to the source's keydown", () => {
    const listeners: Array<(e: KeyEventLike) => void> = [];
    const source = {
      addEventListener: (_: "keydown", handler: (e: KeyEventLike) => void) => {
        listeners.push(handler);
      },
    };
    const handler = bindKeys(source, actions);
    expect(listeners).toEqual([handler]);
    listeners[0](key("n"));
    expect(calls).toEqual(["reject"]);
  });
});
