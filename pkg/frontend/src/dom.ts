/** DOM rendering and progressive enhancement of the server-rendered forms.
 *
 * The server-rendered pages are fully functional without this script (plain
 * form posts); enhancement only swaps full-page navigations for in-page
 * fetches and renders the resulting view. The security boundary stays
 * entirely server-side: this code never reads, writes, or depends on the
 * enrollment cookie, which is HttpOnly and invisible to scripts.
 */

import {
  ChallengeField,
  PageState,
  extractBodyView,
  interpretEnrollResponse,
  interpretLoginGet,
  interpretLoginPost,
  parseDescriptor,
} from "./state.js";

export type FetchLike = (
  input: string,
  init?: RequestInit,
) => Promise<{ status: number; text(): Promise<string> }>;

export function currentView(doc: Document): string | null {
  return doc.body?.getAttribute("data-view") ?? null;
}

/** Replace the page content with the given view. Terminal and failure views
 * never contain credential inputs; in particular the gated view renders only
 * an explanation and a link to enrollment. */
export function render(state: PageState, doc: Document): void {
  const body = doc.body;
  body.setAttribute("data-view", state.view);
  while (body.firstChild) {
    body.removeChild(body.firstChild);
  }
  const heading = doc.createElement("h1");
  const text = doc.createElement("p");
  text.textContent = state.message;
  switch (state.view) {
    case "login_success":
      heading.textContent = "Signed in";
      break;
    case "enroll_success":
    case "enroll_reused":
      heading.textContent = "Enrollment";
      break;
    case "gated_401": {
      heading.textContent = "Device not enrolled";
      body.append(heading, text, enrollLink(doc));
      return;
    }
    default:
      heading.textContent = "Something went wrong";
  }
  body.append(heading, text);
  if (state.view === "enroll_success" || state.view === "enroll_reused") {
    const link = doc.createElement("a");
    link.href = "/login";
    link.textContent = "Continue to sign-in";
    const wrap = doc.createElement("p");
    wrap.append(link);
    body.append(wrap);
  }
}

function enrollLink(doc: Document): HTMLParagraphElement {
  const link = doc.createElement("a");
  link.href = "/enroll";
  link.textContent = "Enroll this device";
  const wrap = doc.createElement("p");
  wrap.append(link);
  return wrap;
}

/** Make sure every input-type challenge published by the descriptor has a
 * field on the enrollment form; the server renders them already, so this
 * only repairs drift between a cached page and current policy. */
export function ensureChallengeInputs(
  form: HTMLFormElement,
  fields: ChallengeField[],
  doc: Document,
): void {
  const submit = form.querySelector("button[type=submit]");
  for (const field of fields) {
    if (!field.input || form.querySelector(`[name="${field.id}"]`)) {
      continue;
    }
    const label = doc.createElement("label");
    label.textContent = `${field.label ?? field.id} `;
    const input = doc.createElement("input");
    input.name = field.id;
    input.autocomplete = "off";
    label.append(input);
    form.insertBefore(label, submit);
  }
}

function formBody(form: HTMLFormElement): string {
  const params = new URLSearchParams();
  for (const element of Array.from(form.elements)) {
    const input = element as HTMLInputElement;
    if (input.name) {
      params.set(input.name, input.value);
    }
  }
  return params.toString();
}

const POST_INIT = {
  method: "POST",
  headers: { "Content-Type": "application/x-www-form-urlencoded" },
  credentials: "same-origin" as const,
};

async function submitForm(
  form: HTMLFormElement,
  fetchImpl: FetchLike,
  interpret: (status: number, body: string) => PageState,
  doc: Document,
): Promise<void> {
  const response = await fetchImpl(form.getAttribute("action") ?? "", {
    ...POST_INIT,
    body: formBody(form),
  });
  render(interpret(response.status, await response.text()), doc);
}

/** Re-check the gate and render either the login form state or the gated
 * view. Used when navigating to login without a full page load. */
export async function loadLoginView(
  fetchImpl: FetchLike,
  doc: Document,
): Promise<PageState> {
  const response = await fetchImpl("/login", { credentials: "same-origin" });
  const state = interpretLoginGet(response.status);
  if (state.view !== "login_form") {
    render(state, doc);
  }
  return state;
}

/** Attach in-page submission to whichever of the two forms is present. */
export async function enhance(doc: Document, fetchImpl: FetchLike): Promise<void> {
  const enrollForm = doc.querySelector<HTMLFormElement>("#enroll-form");
  if (enrollForm) {
    try {
      const response = await fetchImpl("/enroll/descriptor", {
        credentials: "same-origin",
      });
      if (response.status === 200) {
        ensureChallengeInputs(
          enrollForm, parseDescriptor(await response.text()), doc);
      }
    } catch {
      // Descriptor is an enhancement; the server-rendered fields stand.
    }
    enrollForm.addEventListener("submit", (event) => {
      event.preventDefault();
      void submitForm(
        enrollForm, fetchImpl,
        (status, body) => interpretEnrollResponse(status, extractBodyView(body)),
        doc);
    });
  }
  const loginForm = doc.querySelector<HTMLFormElement>("#login-form");
  if (loginForm) {
    loginForm.addEventListener("submit", (event) => {
      event.preventDefault();
      void submitForm(loginForm, fetchImpl, interpretLoginPost, doc);
    });
  }
}
