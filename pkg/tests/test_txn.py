from msbc.wire import TxnGenerator, next_txn
from msbc.wire.types import validate_txn


def test_consecutive_ids_distinct():
    gen = TxnGenerator()
    assert gen.next() != gen.next()


def test_first_id_form():
    assert TxnGenerator().next() == "t00000001"


def test_ids_satisfy_txn_charset():
    gen = TxnGenerator(prefix="gw1.")
    for _ in range(100):
        validate_txn(gen.next())


def test_million_ids_all_distinct():
    gen = TxnGenerator()
    ids = {next_txn(gen) for _ in range(1_000_000)}
    assert len(ids) == 1_000_000


def test_width_grows_without_collision():
    gen = TxnGenerator()
    gen._counter = iter(range(99_999_998, 100_000_003))
    seen = [gen.next() for _ in range(5)]
    assert len(set(seen)) == 5
    assert all(len(t) <= 32 for t in seen)
