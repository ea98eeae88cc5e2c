/** Keyboard bindings. The handler is a pure function of an event-like value
 * so tests can drive it without a DOM: y confirms, n rejects, j or the right
 * arrow moves forward, k or the left arrow moves back, space or p plays the
 * clip, r refreshes the queue. Auto-repeat and keystrokes aimed at form
 * fields are ignored so holding a key never fires a burst of decisions.
 */

export interface KeyEventLike {
  key: string;
  repeat?: boolean;
  target?: unknown;
  preventDefault(): void;
}

export interface KeyActions {
  confirm(): void;
  reject(): void;
  next(): void;
  prev(): void;
  play(): void;
  refresh(): void;
}

export interface KeySource {
  addEventListener(type: "keydown", handler: (event: KeyEventLike) => void): void;
}

const EDITABLE = new Set(["INPUT", "TEXTAREA", "SELECT"]);

function targetsFormField(target: unknown): boolean {
  const tag = (target as { tagName?: unknown } | null)?.tagName;
  return typeof tag === "string" && EDITABLE.has(tag);
}

export function keyHandler(actions: KeyActions): (event: KeyEventLike) => void {
  return (event) => {
    if (event.repeat || targetsFormField(event.target)) return;
    switch (event.key) {
      case "y":
        event.preventDefault();
        actions.confirm();
        break;
      case "n":
        event.preventDefault();
        actions.reject();
        break;
      case "j":
      case "ArrowRight":
        event.preventDefault();
        actions.next();
        break;
      case "k":
      case "ArrowLeft":
        event.preventDefault();
        actions.prev();
        break;
      case " ":
      case "p":
        event.preventDefault();
        actions.play();
        break;
      case "r":
        event.preventDefault();
        actions.refresh();
        break;
    }
  };
}

export function bindKeys(source: KeySource, actions: KeyActions): (event: KeyEventLike) => void {
  const handler = keyHandler(actions);
  source.addEventListener("keydown", handler);
  return handler;
}
