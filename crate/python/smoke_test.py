"""Exercise the Python bindings end to end. Run after `pip install -e crates/py`."""

import json

import omniengine as oe

WORDS = "the harbour of the old town and the boats in the bay with nets from the north".split()


def prose(n, salt=""):
    return " ".join(f"{w}{salt}" if i % 3 else w for i, w in enumerate(WORDS * (n // len(WORDS) + 1)))[:n * 8] + "."


def pending(url):
    return {"url": url, "width": 0, "height": 0, "aesthetic": -1.0, "nsfw": -1.0,
            "phash": None, "dhash": None, "status": "pending", "alt": None}


def doc(i, text, day=2, images=("http://img.test/a.jpg",)):
    elements = [{"tag": "text", "content": text}]
    elements += [{"tag": "image", "image": pending(u)} for u in images]
    return json.dumps({
        "id": f"d{i}",
        "url": f"http://site.test/{i}",
        "timestamp": f"2023-03-{day:02d}T12:00:00Z",
        "language": "en",
        "elements": elements,
        "meta": dict.fromkeys(["nsfw_text", "political", "toxic", "advertisement", "fluency"], -1.0),
    })


def main():
    # stream format round trip
    d = oe.Document.from_json(doc(1, prose(90)))
    assert d.id == "d1" and d.image_count == 1 and d.text_count == 1
    assert oe.Document.from_json(d.to_json()) == d
    assert len(oe.parse_jsonl(d.to_json() + "\n\n" + d.to_json())) == 2

    # extraction
    html = (
        "<html><body><nav>menu</nav><article>"
        + "".join(f"<p>{prose(40, str(i))}</p>" for i in range(3))
        + '<img src="/photos/a.jpg"></article><script>SENTINEL</script></body></html>'
    ).encode()
    got, reason = oe.extract_html(html, "https://news.test/x", "2023-05-01T00:00:00Z")
    assert reason is None and got.image_urls() == ["https://news.test/photos/a.jpg"], (got, reason)
    assert "SENTINEL" not in got.text() and "menu" not in got.text()
    none, reason = oe.extract_html(f"<html><body><article><p>{prose(60)}</p></article></body></html>".encode(), "https://a.test/")
    assert none is None and reason == "no_image"

    # filters
    short = oe.Document.from_json(doc(2, "too short."))
    assert oe.preliminary(short)[0].startswith("drop:")
    social = oe.Document.from_json(doc(3, prose(90)).replace('"elements": [', '"elements": [{"tag": "text", "content": "Follow us on twitter"}, '))
    kept, decision, rules = oe.apply_rules(social)
    assert decision == "modified" and rules and kept.text_count == 1

    # dedup keeps the latest copy
    old = oe.Document.from_json(doc(4, prose(90), day=1))
    new = oe.Document.from_json(doc(5, prose(90), day=9))
    assert [x.id for x in oe.dedup([old, new])] == ["d5"]
    assert oe.jaccard_estimate(prose(90), prose(90)) == 1.0

    # hashes
    w, h = 64, 48
    grad = bytes((x * 4) % 256 for y in range(h) for x in range(w))
    mirrored = bytes(grad[y * w + (w - 1 - x)] for y in range(h) for x in range(w))
    assert oe.hamming(oe.dhash(w, h, grad), oe.dhash(w, h, mirrored)) > 0
    assert oe.phash(w, h, grad) == oe.phash(w, h, grad)
    pgm = b"P5\n2 2\n255\n" + bytes([0, 64, 128, 255])
    assert oe.decode_pgm(pgm) == (2, 2, bytes([0, 64, 128, 255]))

    # bloom
    bf = oe.BloomFilter(9585, 7)
    assert not bf.insert(oe.normalize_url("HTTP://Img.Test/a.jpg#frag"))
    assert "http://img.test/a.jpg" in bf
    assert abs(oe.BloomFilter.theoretical_fpr(1000, 9585, 7) - 0.01) < 1e-3

    # scheduler
    table = oe.schedule_table()
    assert len(table) == 12
    plan, hours = oe.optimal_schedule()
    assert plan == "①②④③" and abs(hours - 2.27) < 0.05, (plan, hours)

    # metrics
    stats = oe.corpus_stats([d, new])
    assert stats["documents"] == 2 and "token_length" in stats["histograms"]
    assert d.metrics()["token_length"] > 0

    # whole pipeline, soft mode, no image store configured
    jsonl = "\n".join(doc(i, prose(90, str(i))) for i in range(5)) + "\nnot json\n"
    docs, report = oe.run_pipeline(jsonl, seed=7, workers=2)
    assert report["input_lines"] == 6 and report["malformed"] == 1
    assert len(docs) == 5 and report["seed"] == 7
    hard_docs, hard = oe.run_pipeline(jsonl, hard_drop=True)
    assert len(hard_docs) == 0, "images cannot be fetched without a store"

    print("smoke test ok")


if __name__ == "__main__":
    main()
