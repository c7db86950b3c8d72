/**
 * Keyboard-first interaction: digit keys pick a class, Enter accepts the
 * current proposal. Accepting is disabled when no proposal is shown
 * (mode "none" or task without one).
 */

export type KeyAction =
  | { type: 'class'; classIndex: number }
  | { type: 'accept' };

/** Digit 1..9 maps to class 0..8 and 0 to class 9, mirroring the on-screen
 * buttons; returns null for keys that shouldn't trigger anything. */
export function mapKey(
  key: string,
  numClasses: number,
  acceptEnabled: boolean,
): KeyAction | null {
  if (key === 'Enter') {
    return acceptEnabled ? { type: 'accept' } : null;
  }
  if (/^[0-9]$/.test(key)) {
    const classIndex = key === '0' ? 9 : Number(key) - 1;
    if (classIndex < numClasses) {
      return { type: 'class', classIndex };
    }
  }
  return null;
}

/** Label shown on a class button for its keyboard shortcut. */
export function classKeyLabel(classIndex: number): string | null {
  if (classIndex < 9) return String(classIndex + 1);
  if (classIndex === 9) return '0';
  return null;
}
