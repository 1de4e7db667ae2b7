// Thin stdin/stdout wrapper around the z3 WASM build, so callers can speak
// to it the same way they would to a native `z3 -in` process: write SMT-LIB2
// commands, read answers. Input is buffered until parentheses balance and
// evaluated in one persistent context.
//
// Scripts are copied into WASM heap memory before evaluation. The library's
// own string marshalling hands `eval_smtlib2_string` a stack-allocated
// buffer that can be recycled while the solver thread is still reading it,
// which truncates scripts nondeterministically; a malloc'd copy that lives
// until the promise settles avoids that.

'use strict';

const { init } = require('z3-solver');

function makeSplitter() {
  // Incremental splitter: feed chunks, get back complete command groups.
  let buf = '';
  let depth = 0;
  let inString = false;   // "..." with "" escapes
  let inQuoted = false;   // |...|
  let inComment = false;  // ; to end of line
  let boundary = 0;       // index up to which buf has been scanned

  return function feed(chunk) {
    const out = [];
    buf += chunk;
    let i = boundary;
    for (; i < buf.length; i++) {
      const ch = buf[i];
      if (inComment) {
        if (ch === '\n') inComment = false;
        continue;
      }
      if (inString) {
        if (ch === '"') {
          if (buf[i + 1] === '"') { i++; } else { inString = false; }
        }
        continue;
      }
      if (inQuoted) {
        if (ch === '|') inQuoted = false;
        continue;
      }
      if (ch === ';') { inComment = true; continue; }
      if (ch === '"') { inString = true; continue; }
      if (ch === '|') { inQuoted = true; continue; }
      if (ch === '(') { depth++; continue; }
      if (ch === ')') {
        depth--;
        if (depth === 0) {
          out.push(buf.slice(0, i + 1));
          buf = buf.slice(i + 1);
          i = -1;
        }
        if (depth < 0) depth = 0;
      }
    }
    boundary = buf.length;
    return out;
  };
}

async function main() {
  const { Z3, em } = await init();
  const ctx = Z3.mk_context(Z3.mk_config());
  const encoder = new TextEncoder();

  const evalText = async (text) => {
    const bytes = encoder.encode(text);
    const ptr = em._malloc(bytes.length + 1);
    // HEAPU8 is looked up fresh each time: memory growth replaces the view
    em.HEAPU8.set(bytes, ptr);
    em.HEAPU8[ptr + bytes.length] = 0;
    try {
      return await em.async_call(em._async_Z3_eval_smtlib2_string, ctx, ptr);
    } finally {
      em._free(ptr);
    }
  };

  const feed = makeSplitter();
  const pending = [];
  let queue = Promise.resolve();
  let draining = false;

  const drain = () => {
    if (draining) return;
    draining = true;
    queue = queue.then(async () => {
      while (pending.length) {
        const batch = pending.splice(0, pending.length).join('\n');
        let out;
        try {
          out = await evalText(batch);
        } catch (e) {
          out = `(error "${String(e).replace(/"/g, "'")}")\n`;
        }
        if (out && out.length) {
          process.stdout.write(out.endsWith('\n') ? out : out + '\n');
        }
      }
      draining = false;
    });
  };

  process.stdin.setEncoding('utf8');
  process.stdin.on('data', (chunk) => {
    const groups = feed(chunk);
    if (groups.length) {
      pending.push(...groups);
      drain();
    }
  });
  process.stdin.on('end', () => {
    queue.then(() => process.exit(0));
  });
}

main().catch((e) => {
  process.stderr.write(`z3shim: ${String(e)}\n`);
  process.exit(1);
});
