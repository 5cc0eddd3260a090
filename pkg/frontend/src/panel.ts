/**
 * Render-parameter side panel.
 *
 * Builds the controls directly from a field table so panel and protocol
 * cannot drift apart. Edits are debounced into a single params message per
 * 200 ms window; presets overwrite the whole form and send one message.
 */

export type ParamsSink = (fields: Record<string, unknown>) => void;

interface FieldSpec {
  key: string;
  label: string;
  kind: "number" | "select" | "check" | "vec4" | "vec3opt";
  min?: number;
  max?: number;
  step?: number;
  options?: string[];
}

const FIELDS: FieldSpec[] = [
  { key: "tube_radius", label: "tube radius", kind: "number", min: 0.01, max: 0.5, step: 0.01 },
  { key: "opacity_mode", label: "opacity mode", kind: "select",
    options: ["constant", "transfer", "distance-scaled"] },
  { key: "base_opacity", label: "base opacity", kind: "number", min: 0.01, max: 1, step: 0.01 },
  { key: "tau", label: "saturation cutoff", kind: "number", min: 0.5, max: 1, step: 0.01 },
  { key: "neighbor_mode", label: "neighbor voxels", kind: "select", options: ["off", "on", "auto"] },
  { key: "shadow_mode", label: "shadows", kind: "select",
    options: ["none", "hard", "replines", "cone"] },
  { key: "ao_mode", label: "ambient occlusion", kind: "select",
    options: ["none", "hemisphere-geometry", "density-rays", "precomputed"] },
  { key: "background", label: "background rgba", kind: "vec4" },
  { key: "joint_spheres", label: "joint spheres", kind: "check" },
  { key: "light_dir", label: "light dir (blank = headlight)", kind: "vec3opt" },
  { key: "ambient", label: "ambient", kind: "number", min: 0, max: 1, step: 0.05 },
  { key: "diffuse", label: "diffuse", kind: "number", min: 0, max: 1, step: 0.05 },
  { key: "specular", label: "specular", kind: "number", min: 0, max: 1, step: 0.05 },
  { key: "shininess", label: "shininess", kind: "number", min: 1, max: 256, step: 1 },
  { key: "ao_rays", label: "ao rays", kind: "number", min: 1, max: 400, step: 1 },
  { key: "ao_radius", label: "ao radius", kind: "number", min: 1, max: 64, step: 0.5 },
  { key: "shadow_rep_level", label: "shadow rep level", kind: "number", min: 0, max: 8, step: 1 },
];

const DEFAULTS: Record<string, unknown> = {
  tube_radius: 0.3,
  opacity_mode: "constant",
  base_opacity: 1.0,
  tau: 0.95,
  neighbor_mode: "auto",
  shadow_mode: "none",
  ao_mode: "none",
  background: [0.12, 0.12, 0.14, 1.0],
  joint_spheres: true,
  light_dir: null,
  ambient: 0.2,
  diffuse: 0.7,
  specular: 0.3,
  shininess: 32.0,
  ao_rays: 25,
  ao_radius: 15.0,
  shadow_rep_level: 2,
};

/** Named parameter bundles; each is a delta applied over the defaults. */
export const PRESETS: Record<string, Record<string, unknown>> = {
  "opaque lines": {},
  "transparent overview": { base_opacity: 0.25, tau: 0.95 },
  "transfer function": { opacity_mode: "transfer", base_opacity: 0.6 },
  "soft shadows + ao": {
    shadow_mode: "cone",
    ao_mode: "density-rays",
    base_opacity: 0.8,
  },
  "depth cue": { opacity_mode: "distance-scaled", base_opacity: 0.5 },
};

const DEBOUNCE_MS = 200;

export class ParamPanel {
  private readonly inputs = new Map<string, HTMLElement>();
  private pendingTimer: ReturnType<typeof setTimeout> | null = null;
  private dirty = new Set<string>();

  constructor(private readonly root: HTMLElement, private readonly sink: ParamsSink) {
    this.build();
    this.setAll(DEFAULTS);
  }

  /** Current form contents as protocol-ready fields. */
  snapshot(): Record<string, unknown> {
    const out: Record<string, unknown> = {};
    for (const spec of FIELDS) out[spec.key] = this.readField(spec);
    return out;
  }

  applyPreset(name: string): void {
    const delta = PRESETS[name];
    if (!delta) return;
    const fields = { ...DEFAULTS, ...delta };
    this.setAll(fields);
    this.sink(this.snapshot());
  }

  private build(): void {
    const presetRow = document.createElement("label");
    presetRow.className = "panel-row";
    presetRow.append("preset");
    const presetSel = document.createElement("select");
    for (const name of Object.keys(PRESETS)) {
      const opt = document.createElement("option");
      opt.value = name;
      opt.textContent = name;
      presetSel.append(opt);
    }
    presetSel.addEventListener("change", () => this.applyPreset(presetSel.value));
    presetRow.append(presetSel);
    this.root.append(presetRow);

    for (const spec of FIELDS) {
      const row = document.createElement("label");
      row.className = "panel-row";
      row.append(spec.label);
      row.append(this.makeInput(spec));
      this.root.append(row);
    }
  }

  private makeInput(spec: FieldSpec): HTMLElement {
    if (spec.kind === "select") {
      const sel = document.createElement("select");
      for (const value of spec.options ?? []) {
        const opt = document.createElement("option");
        opt.value = value;
        opt.textContent = value;
        sel.append(opt);
      }
      sel.addEventListener("change", () => this.touch(spec.key));
      this.inputs.set(spec.key, sel);
      return sel;
    }
    const input = document.createElement("input");
    if (spec.kind === "check") {
      input.type = "checkbox";
    } else if (spec.kind === "number") {
      input.type = "number";
      if (spec.min !== undefined) input.min = String(spec.min);
      if (spec.max !== undefined) input.max = String(spec.max);
      if (spec.step !== undefined) input.step = String(spec.step);
    } else {
      input.type = "text";
      input.placeholder = spec.kind === "vec4" ? "r, g, b, a" : "x, y, z";
    }
    input.addEventListener("change", () => this.touch(spec.key));
    this.inputs.set(spec.key, input);
    return input;
  }

  private touch(key: string): void {
    this.dirty.add(key);
    if (this.pendingTimer !== null) clearTimeout(this.pendingTimer);
    this.pendingTimer = setTimeout(() => {
      this.pendingTimer = null;
      const keys = [...this.dirty];
      this.dirty.clear();
      const fields: Record<string, unknown> = {};
      for (const spec of FIELDS) {
        if (keys.includes(spec.key)) fields[spec.key] = this.readField(spec);
      }
      if (Object.keys(fields).length > 0) this.sink(fields);
    }, DEBOUNCE_MS);
  }

  private readField(spec: FieldSpec): unknown {
    const el = this.inputs.get(spec.key)!;
    if (spec.kind === "select") return (el as HTMLSelectElement).value;
    const input = el as HTMLInputElement;
    if (spec.kind === "check") return input.checked;
    if (spec.kind === "number") {
      const v = Number(input.value);
      return Number.isFinite(v) ? v : DEFAULTS[spec.key];
    }
    const parts = input.value.split(",").map((p) => Number(p.trim()));
    if (spec.kind === "vec4") {
      return parts.length === 4 && parts.every(Number.isFinite)
        ? parts
        : DEFAULTS[spec.key];
    }
    if (input.value.trim() === "") return null;
    return parts.length === 3 && parts.every(Number.isFinite) ? parts : null;
  }

  private setAll(fields: Record<string, unknown>): void {
    for (const spec of FIELDS) {
      const el = this.inputs.get(spec.key)!;
      const value = fields[spec.key];
      if (spec.kind === "select") {
        (el as HTMLSelectElement).value = String(value);
      } else if (spec.kind === "check") {
        (el as HTMLInputElement).checked = Boolean(value);
      } else if (spec.kind === "number") {
        (el as HTMLInputElement).value = String(value);
      } else {
        (el as HTMLInputElement).value = Array.isArray(value) ? value.join(", ") : "";
      }
    }
  }
}
