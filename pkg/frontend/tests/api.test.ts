import { describe, expect, it } from "vitest";

import { ApiError, Client } from "../src/api.js";
import { BASE, FakeServer, referenceDoc, referenceSnapshot } from "./fixtures.js";

describe("Client", () => {
  it("fetches the graph snapshot", async () => {
    const server = new FakeServer();
    server.route("/graph", referenceSnapshot());
    const client = new Client(BASE, server.fetch);
    const snapshot = await client.graph();
    expect(snapshot.generation).toBe(1);
    expect(server.calls).toEqual([`${BASE}/graph`]);
  });

  it("long-polls with the since parameter", async () => {
    const server = new FakeServer();
    server.route("/graph?since=5", referenceSnapshot(6));
    const client = new Client(BASE, server.fetch);
    const snapshot = await client.graph(5);
    expect(snapshot.generation).toBe(6);
    expect(server.calls).toEqual([`${BASE}/graph?since=5`]);
  });

  it("url-encodes filter queries", async () => {
    const server = new FakeServer();
    server.route("/nodes?q=os%3Dwindows", []);
    const client = new Client(BASE, server.fetch);
    await client.nodes("os=windows");
    expect(server.calls).toEqual([`${BASE}/nodes?q=os%3Dwindows`]);
  });

  it("fetches a single node by id", async () => {
    const server = new FakeServer();
    server.route("/nodes/1", referenceDoc());
    const client = new Client(BASE, server.fetch);
    const doc = await client.node(1);
    expect(doc.NID).toBe(1);
  });

  it("tolerates a trailing slash in the base url", async () => {
    const server = new FakeServer();
    server.route("/graph", referenceSnapshot());
    const client = new Client(BASE + "/", server.fetch);
    await client.graph();
    expect(server.calls).toEqual([`${BASE}/graph`]);
  });

  it("raises ApiError with the daemon's message", async () => {
    const server = new FakeServer();
    const client = new Client(BASE, server.fetch);
    const failure = await client.node(99).catch((err) => err);
    expect(failure).toBeInstanceOf(ApiError);
    expect(failure.status).toBe(404);
    expect(failure.message).toContain("no such path");
  });
});
