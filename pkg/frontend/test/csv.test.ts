import assert from "node:assert/strict";
import { test } from "node:test";
import { column, parseTraceCsv, SchemaError } from "../src/csv";

const SAMPLE = [
  "iter,consensus_error_l1,energy,z_step_norm,dual_sum_norm,wall_time_us",
  "1,10.0,5.0,0.1,0.0,12.0",
  "2,1.0,0.5,0.01,0.0,11.0",
].join("\n");

test("parses header and rows", () => {
  const trace = parseTraceCsv(SAMPLE, "sample");
  assert.equal(trace.columns.length, 6);
  assert.equal(trace.rows.length, 2);
  assert.deepEqual(column(trace, "consensus_error_l1"), [10.0, 1.0]);
  assert.deepEqual(column(trace, "iter"), [1, 2]);
});

test("empty cells become NaN", () => {
  const text = "iter,consensus_error_l1,energy,extra\n1,2.0,3.0,\n";
  const trace = parseTraceCsv(text, "sample");
  assert.ok(Number.isNaN(column(trace, "extra")[0]));
});

test("rejects missing required columns", () => {
  assert.throws(() => parseTraceCsv("a,b\n1,2\n", "bad"), SchemaError);
});

test("rejects ragged rows", () => {
  const text = "iter,consensus_error_l1,energy\n1,2\n";
  assert.throws(() => parseTraceCsv(text, "bad"), SchemaError);
});

test("rejects empty files", () => {
  assert.throws(() => parseTraceCsv("", "bad"), SchemaError);
});

test("unknown column lookup throws", () => {
  const trace = parseTraceCsv(SAMPLE, "sample");
  assert.throws(() => column(trace, "wibble"), SchemaError);
});
