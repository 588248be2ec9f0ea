// Sandboxed shading expressions: a tiny language compiled both to a JS
// evaluator (CPU resolve, tests) and to a GLSL expression (GPU path).
// Failed edits never disturb the running style: the last successfully
// compiled version stays active.

export type ValueType = "scalar" | "vec3";
export type Value = number | [number, number, number];

interface Token {
  kind: "num" | "ident" | "op" | "lparen" | "rparen" | "comma";
  text: string;
  pos: number;
}

export class StyleError extends Error {}

function tokenize(src: string): Token[] {
  const out: Token[] = [];
  let i = 0;
  while (i < src.length) {
    const c = src[i];
    if (/\s/.test(c)) {
      i++;
      continue;
    }
    if (/[0-9.]/.test(c)) {
      const m = /^[0-9]*\.?[0-9]+(?:[eE][+-]?[0-9]+)?/.exec(src.slice(i));
      if (!m) throw new StyleError(`bad number at ${i}`);
      out.push({ kind: "num", text: m[0], pos: i });
      i += m[0].length;
      continue;
    }
    if (/[a-zA-Z_]/.test(c)) {
      const m = /^[a-zA-Z_][a-zA-Z0-9_]*/.exec(src.slice(i))!;
      out.push({ kind: "ident", text: m[0], pos: i });
      i += m[0].length;
      continue;
    }
    if ("+-*/^".includes(c)) {
      out.push({ kind: "op", text: c, pos: i });
      i++;
      continue;
    }
    if (c === "(") {
      out.push({ kind: "lparen", text: c, pos: i });
      i++;
      continue;
    }
    if (c === ")") {
      out.push({ kind: "rparen", text: c, pos: i });
      i++;
      continue;
    }
    if (c === ",") {
      out.push({ kind: "comma", text: c, pos: i });
      i++;
      continue;
    }
    throw new StyleError(`unexpected character ${JSON.stringify(c)} at ${i}`);
  }
  return out;
}

type Node =
  | { kind: "num"; value: number }
  | { kind: "var"; name: string }
  | { kind: "unary"; child: Node }
  | { kind: "binary"; op: string; left: Node; right: Node }
  | { kind: "call"; name: string; args: Node[] };

function parse(tokens: Token[]): Node {
  let at = 0;
  const peek = () => tokens[at];
  const take = () => tokens[at++];

  function primary(): Node {
    const tok = take();
    if (!tok) throw new StyleError("unexpected end of expression");
    if (tok.kind === "num") return { kind: "num", value: parseFloat(tok.text) };
    if (tok.kind === "op" && tok.text === "-") return { kind: "unary", child: primary() };
    if (tok.kind === "lparen") {
      const inner = expr(0);
      const close = take();
      if (!close || close.kind !== "rparen") throw new StyleError("missing )");
      return inner;
    }
    if (tok.kind === "ident") {
      if (peek()?.kind === "lparen") {
        take();
        const args: Node[] = [];
        if (peek()?.kind !== "rparen") {
          args.push(expr(0));
          while (peek()?.kind === "comma") {
            take();
            args.push(expr(0));
          }
        }
        const close = take();
        if (!close || close.kind !== "rparen") throw new StyleError(`missing ) after ${tok.text}(`);
        return { kind: "call", name: tok.text, args };
      }
      return { kind: "var", name: tok.text };
    }
    throw new StyleError(`unexpected ${tok.text} at ${tok.pos}`);
  }

  const PREC: Record<string, number> = { "+": 1, "-": 1, "*": 2, "/": 2, "^": 3 };

  function expr(minPrec: number): Node {
    let left = primary();
    while (peek()?.kind === "op" && PREC[peek().text] >= minPrec) {
      const op = take().text;
      // ^ is right-associative, the rest bind left
      const right = expr(op === "^" ? PREC[op] : PREC[op] + 1);
      left = { kind: "binary", op, left, right };
    }
    return left;
  }

  const root = expr(0);
  if (at !== tokens.length) throw new StyleError(`trailing input at ${tokens[at].pos}`);
  return root;
}

const ELEMENTWISE = new Set(["abs", "exp", "log", "sqrt", "sin", "cos", "floor", "fract"]);

interface Typed {
  type: ValueType;
  glsl: string;
  evaluate: (env: Record<string, Value>) => Value;
}

function broadcast(a: Value, b: Value, f: (x: number, y: number) => number): Value {
  const av = typeof a === "number" ? null : a;
  const bv = typeof b === "number" ? null : b;
  if (!av && !bv) return f(a as number, b as number);
  const get = (v: Value, i: number) => (typeof v === "number" ? v : v[i]);
  return [f(get(a, 0), get(b, 0)), f(get(a, 1), get(b, 1)), f(get(a, 2), get(b, 2))];
}

function mapValue(v: Value, f: (x: number) => number): Value {
  return typeof v === "number" ? f(v) : [f(v[0]), f(v[1]), f(v[2])];
}

function lit(x: number): string {
  const s = String(x);
  return /[.e]/i.test(s) ? s : `${s}.0`;
}

export function compileExpression(source: string, vars: Record<string, ValueType>): Typed {
  const ast = parse(tokenize(source));

  function check(node: Node): Typed {
    switch (node.kind) {
      case "num":
        return { type: "scalar", glsl: lit(node.value), evaluate: () => node.value };
      case "var": {
        const type = vars[node.name];
        if (!type) throw new StyleError(`unknown variable ${node.name}`);
        return { type, glsl: node.name, evaluate: (env) => env[node.name] };
      }
      case "unary": {
        const child = check(node.child);
        return {
          type: child.type,
          glsl: `(-${child.glsl})`,
          evaluate: (env) => mapValue(child.evaluate(env), (x) => -x),
        };
      }
      case "binary": {
        const left = check(node.left);
        const right = check(node.right);
        const type = left.type === "vec3" || right.type === "vec3" ? "vec3" : "scalar";
        if (node.op === "^") {
          return {
            type,
            glsl: `pow(${coerce(left, type)}, ${coerce(right, type)})`,
            evaluate: (env) => broadcast(left.evaluate(env), right.evaluate(env), Math.pow),
          };
        }
        const fn = { "+": (x: number, y: number) => x + y, "-": (x: number, y: number) => x - y, "*": (x: number, y: number) => x * y, "/": (x: number, y: number) => x / y }[node.op]!;
        return {
          type,
          glsl: `(${left.glsl} ${node.op} ${right.glsl})`,
          evaluate: (env) => broadcast(left.evaluate(env), right.evaluate(env), fn),
        };
      }
      case "call":
        return call(node.name, node.args.map(check));
    }
  }

  function coerce(v: Typed, type: ValueType): string {
    if (v.type === type) return v.glsl;
    if (type === "vec3") return `vec3(${v.glsl})`;
    throw new StyleError("cannot narrow vec3 to scalar");
  }

  function call(name: string, args: Typed[]): Typed {
    const argTypes = args.map((a) => a.type);
    const wantArgs = (n: number) => {
      if (args.length !== n) throw new StyleError(`${name} takes ${n} argument(s)`);
    };
    if (name === "vec3") {
      wantArgs(3);
      if (argTypes.some((t) => t !== "scalar")) throw new StyleError("vec3 takes scalars");
      return {
        type: "vec3",
        glsl: `vec3(${args.map((a) => a.glsl).join(", ")})`,
        evaluate: (env) => [
          args[0].evaluate(env) as number,
          args[1].evaluate(env) as number,
          args[2].evaluate(env) as number,
        ],
      };
    }
    if (name === "dot") {
      wantArgs(2);
      if (argTypes.some((t) => t !== "vec3")) throw new StyleError("dot takes vec3s");
      return {
        type: "scalar",
        glsl: `dot(${args[0].glsl}, ${args[1].glsl})`,
        evaluate: (env) => {
          const a = args[0].evaluate(env) as number[];
          const b = args[1].evaluate(env) as number[];
          return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
        },
      };
    }
    if (name === "length") {
      wantArgs(1);
      if (argTypes[0] !== "vec3") throw new StyleError("length takes a vec3");
      return {
        type: "scalar",
        glsl: `length(${args[0].glsl})`,
        evaluate: (env) => {
          const v = args[0].evaluate(env) as number[];
          return Math.sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
        },
      };
    }
    if (name === "normalize") {
      wantArgs(1);
      if (argTypes[0] !== "vec3") throw new StyleError("normalize takes a vec3");
      return {
        type: "vec3",
        glsl: `normalize(${args[0].glsl})`,
        evaluate: (env) => {
          const v = args[0].evaluate(env) as [number, number, number];
          const n = Math.sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]) || 1;
          return [v[0] / n, v[1] / n, v[2] / n];
        },
      };
    }
    if (name === "min" || name === "max") {
      wantArgs(2);
      const type = argTypes.includes("vec3") ? "vec3" : "scalar";
      const fn = name === "min" ? Math.min : Math.max;
      return {
        type,
        glsl: `${name}(${coerce(args[0], type)}, ${coerce(args[1], type)})`,
        evaluate: (env) => broadcast(args[0].evaluate(env), args[1].evaluate(env), fn),
      };
    }
    if (name === "pow") {
      wantArgs(2);
      const type = argTypes[0];
      return {
        type,
        glsl: `pow(${args[0].glsl}, ${coerce(args[1], type)})`,
        evaluate: (env) => broadcast(args[0].evaluate(env), args[1].evaluate(env), Math.pow),
      };
    }
    if (name === "step") {
      wantArgs(2);
      const type = argTypes[1];
      return {
        type,
        glsl: `step(${coerce(args[0], type)}, ${args[1].glsl})`,
        evaluate: (env) =>
          broadcast(args[0].evaluate(env), args[1].evaluate(env), (e, x) => (x < e ? 0 : 1)),
      };
    }
    if (name === "clamp") {
      wantArgs(3);
      const type = argTypes[0];
      return {
        type,
        glsl: `clamp(${args[0].glsl}, ${coerce(args[1], type)}, ${coerce(args[2], type)})`,
        evaluate: (env) => {
          const lo = args[1].evaluate(env);
          const hi = args[2].evaluate(env);
          const x = args[0].evaluate(env);
          return broadcast(broadcast(x, lo, Math.max), hi, Math.min);
        },
      };
    }
    if (name === "mix") {
      wantArgs(3);
      const type = argTypes[0] === "vec3" || argTypes[1] === "vec3" ? "vec3" : "scalar";
      return {
        type,
        glsl: `mix(${coerce(args[0], type)}, ${coerce(args[1], type)}, ${args[2].glsl})`,
        evaluate: (env) => {
          const t = args[2].evaluate(env);
          const a = args[0].evaluate(env);
          const b = args[1].evaluate(env);
          const diff = broadcast(b, a, (x, y) => x - y);
          return broadcast(a, broadcast(diff, t, (d, tt) => d * tt), (x, y) => x + y);
        },
      };
    }
    if (name === "smoothstep") {
      wantArgs(3);
      const type = argTypes[2];
      return {
        type,
        glsl: `smoothstep(${coerce(args[0], type)}, ${coerce(args[1], type)}, ${args[2].glsl})`,
        evaluate: (env) => {
          const e0 = args[0].evaluate(env);
          const e1 = args[1].evaluate(env);
          const x = args[2].evaluate(env);
          const t0 = broadcast(broadcast(x, e0, (xx, ee) => xx - ee), broadcast(e1, e0, (a, b) => a - b), (n, d) => Math.min(1, Math.max(0, n / d)));
          return mapValue(t0, (t) => t * t * (3 - 2 * t));
        },
      };
    }
    if (ELEMENTWISE.has(name)) {
      wantArgs(1);
      const jsFn: Record<string, (x: number) => number> = {
        abs: Math.abs,
        exp: Math.exp,
        log: Math.log,
        sqrt: Math.sqrt,
        sin: Math.sin,
        cos: Math.cos,
        floor: Math.floor,
        fract: (x) => x - Math.floor(x),
      };
      return {
        type: argTypes[0],
        glsl: `${name}(${args[0].glsl})`,
        evaluate: (env) => mapValue(args[0].evaluate(env), jsFn[name]),
      };
    }
    throw new StyleError(`unknown function ${name}`);
  }

  return check(ast);
}

export interface CompiledStyle {
  source: string;
  glsl: string;
  evaluate: (env: Record<string, Value>) => Value;
}

/**
 * One editable function slot; failed compiles keep the previous program.
 */
export class StyleFunction {
  active: CompiledStyle | null = null;
  error: string | null = null;

  constructor(
    readonly vars: Record<string, ValueType>,
    readonly resultType: ValueType,
  ) {}

  update(source: string): boolean {
    try {
      const typed = compileExpression(source, this.vars);
      if (typed.type !== this.resultType) {
        throw new StyleError(`expression must produce a ${this.resultType}`);
      }
      this.active = { source, glsl: typed.glsl, evaluate: typed.evaluate };
      this.error = null;
      return true;
    } catch (err) {
      this.error = err instanceof Error ? err.message : String(err);
      return false;
    }
  }
}

export function colorStyleVars(fields: string[]): Record<string, ValueType> {
  const vars: Record<string, ValueType> = {
    id: "scalar",
    normal: "vec3",
    sun: "vec3",
    pos: "vec3",
  };
  for (const f of fields) vars[f] = "scalar";
  return vars;
}

export const ALPHA_STYLE_VARS: Record<string, ValueType> = {
  id: "scalar",
  thickness: "scalar",
};

export const DEFAULT_COLOR_SOURCE =
  "mix(vec3(0.85, 0.5, 0.2), vec3(0.2, 0.55, 0.9), clamp(id, 0, 1)) * (0.35 + 0.65 * max(dot(normal, sun), 0))";
export const DEFAULT_ALPHA_SOURCE = "1 - exp(-0.35 * thickness)";
