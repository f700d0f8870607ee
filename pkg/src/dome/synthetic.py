"""Small synthetic corpora used by the experiments and the test suite."""

from __future__ import annotations

import numpy as np

from .corpus import CodeCommentRecord, IntentCategory

W, Y, U, H, P, O = (IntentCategory.WHAT, IntentCategory.WHY, IntentCategory.HOW_TO_USE,
                    IntentCategory.HOW_IT_IS_DONE, IntentCategory.PROPERTY, IntentCategory.OTHERS)

# The first eight snippets carry several intents each; the rest carry one.
SNIPPETS = [
    ("int add(int a, int b) {\n  return a + b;\n}",
     {W: "returns the sum of two integers",
      Y: "kept simple so the jit can inline it",
      P: "the result may overflow silently"}),
    ("void close() {\n  if (stream != null) {\n    stream.close();\n  }\n  stream = null;\n}",
     {W: "closes the underlying stream",
      U: "call once when the reader is no longer needed"}),
    ("List<User> findActive(List<User> users) {\n  List<User> out = new ArrayList<>();\n"
     "  for (User u : users) {\n    if (u.isActive()) out.add(u);\n  }\n  return out;\n}",
     {W: "returns all active users",
      H: "iterates over the list and keeps active entries",
      P: "never returns null"}),
    ("String getName() {\n  return name;\n}",
     {W: "returns the display name",
      P: "the name may be empty but never null"}),
    ("void setTimeout(long ms) {\n  if (ms < 0) throw new IllegalArgumentException();\n  timeout = ms;\n}",
     {W: "sets the request timeout",
      Y: "negative values would disable the watchdog",
      U: "pass the timeout in milliseconds"}),
    ("int hash(String key) {\n  int h = 17;\n  for (char c : key.toCharArray()) h = 31 * h + c;\n  return h;\n}",
     {H: "combines characters with a multiplier of thirty one",
      Y: "a prime multiplier spreads the keys evenly"}),
    ("synchronized void increment() {\n  count++;\n}",
     {W: "increments the shared counter",
      P: "this method is thread safe",
      Y: "synchronized because several workers update the count"}),
    ("Object load(String path) {\n  byte[] data = Files.readAllBytes(path);\n  return decode(data);\n}",
     {W: "loads an object from disk",
      H: "reads every byte then decodes the buffer"}),
    ("boolean isEmpty() {\n  return size == 0;\n}", {W: "checks whether the queue is empty"}),
    ("void clear() {\n  cache.clear();\n  hits = 0;\n}", {H: "empties the cache and resets the hit counter"}),
    ("double average(int[] xs) {\n  double s = 0;\n  for (int x : xs) s += x;\n  return s / xs.length;\n}",
     {W: "computes the arithmetic mean"}),
    ("void register(Listener l) {\n  listeners.add(l);\n}",
     {U: "register listeners before starting the bus"}),
    ("int max(int a, int b) {\n  return a > b ? a : b;\n}", {W: "returns the larger value"}),
    ("void flush() {\n  writer.flush();\n}", {Y: "flush early so partial logs survive a crash"}),
    ("Node reverse(Node head) {\n  Node prev = null;\n  while (head != null) {\n    Node n = head.next;\n"
     "    head.next = prev;\n    prev = head;\n    head = n;\n  }\n  return prev;\n}",
     {H: "walks the list and flips each next pointer"}),
    ("long now() {\n  return System.currentTimeMillis();\n}", {P: "the value is not monotonic"}),
    ("void start() {\n  thread = new Thread(this);\n  thread.start();\n}", {U: "call start only once per instance"}),
    ("String trim(String s) {\n  return s == null ? null : s.trim();\n}", {P: "returns null for null input"}),
    ("int size() {\n  return items.size();\n}", {W: "returns the number of stored items"}),
    ("byte[] encode(String s) {\n  return s.getBytes(UTF_8);\n}", {H: "encodes the text with utf eight"}),
]


def one_to_many_corpus() -> list[CodeCommentRecord]:
    """32 records; eight code snippets appear with two or three distinct intents."""
    records = []
    for code, by_intent in SNIPPETS:
        for intent, comment in by_intent.items():
            records.append(CodeCommentRecord(code, comment, intent, len(records)))
    return records


KEYWORDS = {W: "returns", Y: "because", U: "call", H: "iterates", P: "threadsafe", O: "todo"}
_FILLER = ("the value list item node buffer stream user cache count index key name data "
           "result input output file path entry field object map set").split()
_CODE = ("int x = a + b ; return x ; if ( y ) { z ( ) ; } for ( i ) { sum += i ; } "
         "list . add ( v ) ; map . get ( k ) ;").split()


def keyword_corpus(n: int = 600, seed: int = 0) -> list[CodeCommentRecord]:
    """Comments whose intent is marked by one keyword; balanced over the six intents."""
    rng = np.random.default_rng(seed)
    intents = list(IntentCategory)
    records = []
    for i in range(n):
        intent = intents[i % len(intents)]
        words = list(rng.choice(_FILLER, size=rng.integers(3, 7)))
        words.insert(int(rng.integers(0, len(words) + 1)), KEYWORDS[intent])
        code = " ".join(rng.choice(_CODE, size=rng.integers(6, 14)))
        records.append(CodeCommentRecord(code, " ".join(words), intent, i))
    order = rng.permutation(n)
    return [CodeCommentRecord(records[j].code, records[j].comment, records[j].intent, k)
            for k, j in enumerate(order)]
