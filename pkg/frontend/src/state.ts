/** Pure page-state logic: the view model and the mapping from server
 * responses to views. No DOM access here, so it is unit-testable directly.
 */

export type View =
  | "enroll_form"
  | "enroll_success"
  | "enroll_reused"
  | "login_form"
  | "gated_401"
  | "login_success"
  | "generic_failure";

export interface PageState {
  view: View;
  message: string;
}

/** Single uniform failure text: every declined or rejected request shows the
 * same message regardless of the server's internal reason-class. */
export const UNIFORM_FAILURE =
  "The request could not be completed. Check your details and try again.";

export const GATED_MESSAGE =
  "Sign-in is not available on this device. Enroll the device first.";

export const OFF_NETWORK_MESSAGE =
  "Enrollment is only available from the corporate network.";

export const ENROLLED_MESSAGE = "Device enrolled. You can now sign in.";
export const REUSED_MESSAGE = "This device is already enrolled.";

/** One field of the enrollment form as published by GET /enroll/descriptor. */
export interface ChallengeField {
  id: string;
  kind: string;
  input: boolean;
  label?: string;
}

export function parseDescriptor(body: string): ChallengeField[] {
  const doc = JSON.parse(body) as { challenges?: unknown };
  if (!Array.isArray(doc.challenges)) {
    return [];
  }
  return doc.challenges.filter(
    (entry): entry is ChallengeField =>
      typeof entry === "object" && entry !== null &&
      typeof (entry as ChallengeField).id === "string" &&
      typeof (entry as ChallengeField).kind === "string" &&
      typeof (entry as ChallengeField).input === "boolean",
  );
}

/** `bodyView` is the data-view attribute of the returned page, when the
 * response was HTML; enrollment success pages carry it. */
export function interpretEnrollResponse(
  status: number,
  bodyView: string | null,
): PageState {
  if (status === 200 && bodyView === "enroll_reused") {
    return { view: "enroll_reused", message: REUSED_MESSAGE };
  }
  if (status === 200) {
    return { view: "enroll_success", message: ENROLLED_MESSAGE };
  }
  if (status === 404) {
    // The enrollment endpoint is invisible off-network.
    return { view: "generic_failure", message: OFF_NETWORK_MESSAGE };
  }
  return { view: "generic_failure", message: UNIFORM_FAILURE };
}

export function interpretLoginGet(status: number): PageState {
  if (status === 200) {
    return { view: "login_form", message: "" };
  }
  return { view: "gated_401", message: GATED_MESSAGE };
}

export function interpretLoginPost(status: number, body: string): PageState {
  if (status === 200) {
    try {
      const doc = JSON.parse(body) as { username?: string };
      if (typeof doc.username === "string") {
        return { view: "login_success", message: `Signed in as ${doc.username}.` };
      }
    } catch {
      // fall through to the uniform failure below
    }
  }
  return { view: "generic_failure", message: UNIFORM_FAILURE };
}

export function extractBodyView(html: string): string | null {
  const match = /<body[^>]*\bdata-view="([a-z0-9_]+)"/.exec(html);
  return match ? match[1] : null;
}
