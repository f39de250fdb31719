// Client-side session state: optimistic log, in-flight serialization,
// refine pre-fill. No image math happens here; the service owns all of it.

import { ApiError, Instruction, MessageRecord, SessionState, StudioApi } from "./api";

export interface LogEntry extends MessageRecord {
  error?: string; // inline HTTP failure for the message that caused it
}

export interface StudioState {
  phase: "connecting" | "ready" | "down";
  session: SessionState | null;
  log: LogEntry[];
  banner: string | null; // service unreachable
  toast: string | null; // transient error (bad upload, bad payload)
  inFlight: boolean;
  draft: string;
  instruction: Instruction;
}

const PNG_MAGIC = [0x89, 0x50, 0x4e, 0x47];

// base64 PNG sanity check so a bad payload becomes a toast, not a crash
export function decodablePng(b64: string): boolean {
  let head: string;
  try {
    head = atob(b64.slice(0, 8));
  } catch {
    return false;
  }
  return PNG_MAGIC.every((byte, i) => head.charCodeAt(i) === byte);
}

export class SessionController {
  state: StudioState = {
    phase: "connecting",
    session: null,
    log: [],
    banner: null,
    toast: null,
    inFlight: false,
    draft: "",
    instruction: "describe",
  };

  private listeners: Array<() => void> = [];

  constructor(private readonly api: StudioApi) {}

  subscribe(fn: () => void): void {
    this.listeners.push(fn);
  }

  private emit(): void {
    for (const fn of this.listeners) fn();
  }

  /** Create a session (or reconnect after a banner retry). */
  async start(): Promise<void> {
    this.state.phase = "connecting";
    this.state.banner = null;
    this.emit();
    try {
      const { id } = await this.api.createSession();
      this.state.session = await this.api.getSession(id);
      this.state.log = [...this.state.session.log];
      this.state.phase = "ready";
    } catch (err) {
      this.state.phase = "down";
      this.state.banner = err instanceof Error ? err.message : String(err);
    }
    this.emit();
  }

  get hasImage(): boolean {
    return this.state.session?.has_image ?? false;
  }

  /** Restore/refine (and describe) work only once an image is uploaded. */
  get canSend(): boolean {
    if (this.state.inFlight || this.state.session === null) return false;
    const instr = this.state.instruction;
    if (instr !== "none" && !this.hasImage) return false;
    if (instr === "refine" && this.state.draft.trim() === "") return false;
    return true;
  }

  async upload(png: ArrayBuffer | Blob): Promise<boolean> {
    const session = this.state.session;
    if (session === null || this.state.inFlight) return false;
    this.state.inFlight = true;
    this.state.toast = null;
    this.emit();
    try {
      await this.api.uploadImage(session.id, png);
      this.state.session = await this.api.getSession(session.id);
      this.state.log = [...this.state.session.log];
      return true;
    } catch (err) {
      this.state.toast = err instanceof Error ? err.message : String(err);
      return false;
    } finally {
      this.state.inFlight = false;
      this.emit();
    }
  }

  /**
   * Send the current draft under the selected instruction.
   *
   * The user message is appended optimistically; the reply image is swapped
   * in on arrival. Returns false when the send was suppressed (a request is
   * already in flight, or the instruction is not available yet).
   */
  async send(): Promise<boolean> {
    if (!this.canSend) return false;
    const session = this.state.session!;
    const entry: LogEntry = {
      role: "user",
      text: this.state.draft,
      instruction: this.state.instruction,
      timestamp: Date.now() / 1000,
    };
    this.state.log.push(entry);
    this.state.inFlight = true;
    this.emit();
    try {
      const reply = await this.api.sendMessage(session.id, entry.text, entry.instruction);
      this.state.log.push({
        role: "assistant",
        text: reply.reply_text,
        instruction: entry.instruction,
        timestamp: Date.now() / 1000,
      });
      if (reply.image_b64 !== undefined) {
        if (decodablePng(reply.image_b64)) {
          this.state.session = { ...session, restored_b64: reply.image_b64 };
        } else {
          this.state.toast = "image payload from the service could not be decoded";
        }
      }
      this.state.draft = "";
      return true;
    } catch (err) {
      entry.error = err instanceof Error ? err.message : String(err);
      return false;
    } finally {
      this.state.inFlight = false;
      this.emit();
    }
  }

  setDraft(text: string): void {
    this.state.draft = text;
    this.emit();
  }

  /** Selecting refine pre-fills the last description so it can be edited. */
  setInstruction(instr: Instruction): void {
    this.state.instruction = instr;
    if (instr === "refine" && this.state.draft.trim() === "") {
      this.state.draft = this.lastDescription();
    }
    this.emit();
  }

  /**
   * Most recent description in the log: a describe/restore reply carries the
   * description verbatim, and a user refine message is itself one.
   */
  lastDescription(): string {
    for (let i = this.state.log.length - 1; i >= 0; i--) {
      const entry = this.state.log[i]!;
      if (entry.error !== undefined) continue;
      if (entry.role === "assistant" && (entry.instruction === "describe" || entry.instruction === "restore")) {
        return entry.text;
      }
      if (entry.role === "user" && entry.instruction === "refine") {
        return entry.text;
      }
    }
    return "";
  }

  dismissToast(): void {
    this.state.toast = null;
    this.emit();
  }
}
