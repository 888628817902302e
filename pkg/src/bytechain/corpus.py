"""Deterministic toy-ISA corpus with exact ground truth for every task.

The instruction set is built so a single linear scan recovers all labels:
an instruction's length is fixed by its first byte (top two bits plus
one), operand bytes stay below 0xA0, and every structural opcode
(prologue, epilogue, argument and return-type markers, no-ops) is
reserved so it can never be mistaken for an operand. Functions open with
a prologue instruction, announce their argument count as a run of
arg-marker instructions, announce the return type just before the
epilogue, and close with a fixed epilogue opcode.

Compiler and optimization provenance are injected as deterministic
rewrites: the compiler tag picks the no-op opcode, O0 inserts extra
no-ops, O1 leaves the stream alone, and O2 fuses marker+no-op pairs into
dedicated 4-byte opcodes. Variants of one source function share a group
id, which powers the similarity task.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, replace

import numpy as np

from .exceptions import CannotSplit, MissingLabel, ParseError
from .heads import HeadKind

log = logging.getLogger(__name__)

# label conventions (index into the class tuples in heads.py)
SI, MI = 0, 1
SF, MF, EF = 0, 1, 2

COMPILER_TAGS = ("G", "C")
OPT_TAGS = ("O0", "O1", "O2")

NAME_VOCAB = (
    "get set put add sub mul div mod load store copy move push pop call ret "
    "open close read write alloc free init fini hash pack seek poll wait fork "
    "map sync"
).split()
NAME_VOCAB_SIZE = len(NAME_VOCAB)  # 32


@dataclass(frozen=True)
class ToyIsaSpec:
    operand_lo: int = 0x00
    operand_hi: int = 0x9F  # inclusive
    prologue: tuple[int, int] = (0xAA, 0xBB)
    epilogue_opcode: int = 0xCC
    arg_marker_base: int = 0xA0  # +i, i = argument index
    ret_marker_base: int = 0xB0  # +j, j = return-type class
    fused_arg_base: int = 0xE0  # marker fused with a trailing no-op
    fused_ret_base: int = 0xF0
    nop_opcodes: tuple[int, int] = (0x3E, 0x3F)  # per compiler tag (G, C)
    max_args: int = 8
    num_ret_types: int = 6
    num_arg_classes: int = 7  # 0..5 plus "others"
    num_families: int = 9
    funcs_per_file: tuple[int, int] = (3, 10)
    body_instructions: tuple[int, int] = (5, 40)

    def __post_init__(self):
        assert self.operand_hi < self.arg_marker_base
        assert self.instruction_length(self.prologue[0]) == 3
        assert self.instruction_length(self.epilogue_opcode) == 4
        assert self.instruction_length(self.arg_marker_base) == 3
        assert self.instruction_length(self.ret_marker_base) == 3
        assert self.instruction_length(self.fused_arg_base) == 4
        assert self.instruction_length(self.fused_ret_base) == 4
        for nop in self.nop_opcodes:
            assert self.instruction_length(nop) == 1
            assert self.operand_lo <= nop <= self.operand_hi

    @staticmethod
    def instruction_length(first_byte: int) -> int:
        return (first_byte >> 6) + 1

    def reserved_opcodes(self) -> frozenset[int]:
        res = set(self.prologue) | {self.epilogue_opcode} | set(self.nop_opcodes)
        res |= {self.arg_marker_base + i for i in range(self.max_args + 2)}
        res |= {self.ret_marker_base + j for j in range(self.num_ret_types)}
        res |= {self.fused_arg_base + i for i in range(self.max_args + 2)}
        res |= {self.fused_ret_base + j for j in range(self.num_ret_types)}
        return frozenset(res)

    def body_opcodes(self) -> tuple[int, ...]:
        # opcodes above the operand range keep instruction starts locally
        # decidable, which the desk-scale encoder can actually learn
        reserved = self.reserved_opcodes()
        return tuple(
            b for b in range(self.operand_hi + 1, 0x100) if b not in reserved
        )

    def arg_class(self, arg_count: int) -> int:
        return min(arg_count, self.num_arg_classes - 1)


@dataclass(frozen=True)
class LabeledRecord:
    """One byte sequence with every task label the generator can attest."""

    record_id: str
    shard: str
    project: str
    file_key: str
    compiler_tag: str
    opt_tag: str
    family_id: int
    data: bytes
    inst_labels: bytes  # per byte: SI/MI
    func_labels: bytes  # per byte: SF/MF/EF
    is_file: bool
    arg_count_class: int | None = None
    ret_type: int | None = None
    name_words: tuple[int, ...] | None = None
    group_id: str | None = None

    def __post_init__(self):
        if len(self.inst_labels) != len(self.data):
            raise ValueError("inst label length mismatch")
        if len(self.func_labels) != len(self.data):
            raise ValueError("func label length mismatch")


# ---------------------------------------------------------------------------
# generation

# instruction node tags used by the base stream before rendering
_PROLOGUE, _ARG, _RET, _BODY, _NOP, _EPILOGUE, _FUSED_ARG, _FUSED_RET = range(8)


def _rand_operand(rng: np.random.Generator, spec: ToyIsaSpec) -> int:
    while True:
        b = int(rng.integers(spec.operand_lo, spec.operand_hi + 1))
        if b not in spec.nop_opcodes:
            return b


def _base_function(rng, spec: ToyIsaSpec, family_id: int, palette, weights):
    """One source function as an abstract instruction list."""
    instrs = [(_PROLOGUE, _rand_operand(rng, spec))]
    arg_count = int(rng.integers(0, spec.max_args + 1))
    for i in range(arg_count):
        instrs.append((_ARG, i, _rand_operand(rng, spec), _rand_operand(rng, spec)))
        if rng.random() < 0.5:
            instrs.append((_NOP,))
    lo, hi = spec.body_instructions
    n_body = min(hi, max(lo, int(rng.geometric(0.08)) + lo - 1))
    for _ in range(n_body):
        op = int(palette[rng.choice(len(palette), p=weights)])
        n_operands = spec.instruction_length(op) - 1
        instrs.append((_BODY, op, tuple(_rand_operand(rng, spec) for _ in range(n_operands))))
    ret_type = int(rng.integers(0, spec.num_ret_types))
    instrs.append((_RET, ret_type, _rand_operand(rng, spec), _rand_operand(rng, spec)))
    instrs.append((_NOP,))  # O2 always has a marker+no-op pair to fuse
    instrs.append((_EPILOGUE, tuple(_rand_operand(rng, spec) for _ in range(3))))
    return instrs, arg_count, ret_type


def _rewrite(instrs: list, opt_tag: str) -> list:
    if opt_tag == "O1":
        return list(instrs)
    if opt_tag == "O0":
        out = []
        for idx, ins in enumerate(instrs, start=1):
            out.append(ins)
            if idx % 4 == 0 and idx < len(instrs):
                out.append((_NOP,))
        return out
    if opt_tag == "O2":
        out = []
        i = 0
        while i < len(instrs):
            ins = instrs[i]
            nxt = instrs[i + 1] if i + 1 < len(instrs) else None
            if ins[0] == _ARG and nxt == (_NOP,):
                out.append((_FUSED_ARG, ins[1], ins[2], ins[3]))
                i += 2
            elif ins[0] == _RET and nxt == (_NOP,):
                out.append((_FUSED_RET, ins[1], ins[2], ins[3]))
                i += 2
            else:
                out.append(ins)
                i += 1
        return out
    raise ValueError(f"unknown opt tag {opt_tag!r}")


def _render(instrs: list, spec: ToyIsaSpec, compiler_tag: str) -> tuple[bytes, bytes]:
    """Materialize an instruction list; labels come from the structure
    itself, not from re-scanning the bytes."""
    nop = spec.nop_opcodes[COMPILER_TAGS.index(compiler_tag)]
    out = bytearray()
    labels = bytearray()
    for ins in instrs:
        tag = ins[0]
        if tag == _PROLOGUE:
            enc = bytes((spec.prologue[0], spec.prologue[1], ins[1]))
        elif tag == _ARG:
            enc = bytes((spec.arg_marker_base + ins[1], ins[2], ins[3]))
        elif tag == _RET:
            enc = bytes((spec.ret_marker_base + ins[1], ins[2], ins[3]))
        elif tag == _FUSED_ARG:
            enc = bytes((spec.fused_arg_base + ins[1], ins[2], ins[3], ins[2]))
        elif tag == _FUSED_RET:
            enc = bytes((spec.fused_ret_base + ins[1], ins[2], ins[3], ins[2]))
        elif tag == _BODY:
            enc = bytes((ins[1], *ins[2]))
        elif tag == _NOP:
            enc = bytes((nop,))
        elif tag == _EPILOGUE:
            enc = bytes((spec.epilogue_opcode, *ins[1]))
        else:  # pragma: no cover
            raise AssertionError(tag)
        out += enc
        labels.append(SI)
        labels += bytes([MI]) * (len(enc) - 1)
    return bytes(out), bytes(labels)


def _name_words(arg_class: int, ret_type: int, family_id: int) -> tuple[int, ...]:
    words = (arg_class, 7 + ret_type, 13 + family_id)
    n = 1 + (arg_class + ret_type + family_id) % 3
    return words[:n]


def generate_program(
    seed: int,
    spec: ToyIsaSpec,
    profile: tuple[str, str, int],
    shard: str = "default",
) -> list[LabeledRecord]:
    """All records for one synthetic file: one per function plus the file.

    The base instruction stream depends only on (seed, family); compiler
    and optimization tags are rewrites on top, so the same seed rendered
    under different optimization levels yields byte-distinct variants of
    the same source functions.
    """
    compiler_tag, opt_tag, family_id = profile
    if compiler_tag not in COMPILER_TAGS:
        raise ValueError(f"unknown compiler tag {compiler_tag!r}")
    if opt_tag not in OPT_TAGS:
        raise ValueError(f"unknown opt tag {opt_tag!r}")
    if not 0 <= family_id < spec.num_families:
        raise ValueError(f"family id {family_id} out of range")

    rng = np.random.default_rng(np.random.SeedSequence((0xB17E, seed, family_id)))
    palette = np.array(spec.body_opcodes())
    weights = 1.0 + 3.0 * (np.arange(len(palette)) % spec.num_families == family_id)
    weights /= weights.sum()

    n_funcs = int(rng.integers(spec.funcs_per_file[0], spec.funcs_per_file[1] + 1))
    file_key = f"{shard}:{seed}:{compiler_tag}{opt_tag}:f{family_id}"
    project = f"p{seed // 4}"

    records: list[LabeledRecord] = []
    file_bytes = bytearray()
    file_inst = bytearray()
    file_func = bytearray()
    for k in range(n_funcs):
        base, arg_count, ret_type = _base_function(rng, spec, family_id, palette, weights)
        rendered = _render(_rewrite(base, opt_tag), spec, compiler_tag)
        inst = _labels_for(rendered, spec)
        func = bytearray([MF]) * len(rendered)
        func[0] = SF
        func[-1] = EF
        func = bytes(func)
        arg_class = spec.arg_class(arg_count)
        records.append(
            LabeledRecord(
                record_id=f"{file_key}:fn{k}",
                shard=shard,
                project=project,
                file_key=file_key,
                compiler_tag=compiler_tag,
                opt_tag=opt_tag,
                family_id=family_id,
                data=rendered,
                inst_labels=inst,
                func_labels=func,
                is_file=False,
                arg_count_class=arg_class,
                ret_type=ret_type,
                name_words=_name_words(arg_class, ret_type, family_id),
                group_id=f"g{seed}.f{family_id}.{k}",
            )
        )
        file_bytes += rendered
        file_inst += inst
        file_func += func

    records.append(
        LabeledRecord(
            record_id=f"{file_key}:file",
            shard=shard,
            project=project,
            file_key=file_key,
            compiler_tag=compiler_tag,
            opt_tag=opt_tag,
            family_id=family_id,
            data=bytes(file_bytes),
            inst_labels=bytes(file_inst),
            func_labels=bytes(file_func),
            is_file=True,
        )
    )
    return records


SHARD_NAMES = tuple(k.value for k in HeadKind)


def build_corpus(
    root_seed: int,
    spec: ToyIsaSpec | None = None,
    files_per_shard: int = 24,
) -> dict[str, list[LabeledRecord]]:
    """A full set of per-task shards with disjoint seed ranges.

    The similarity shard renders each source file under all three
    optimization levels so every group has positive pairs; provenance and
    malware shards cycle their class grids so all classes are realized.
    """
    spec = spec or ToyIsaSpec()
    shards: dict[str, list[LabeledRecord]] = {}
    for shard_idx, shard in enumerate(SHARD_NAMES):
        base = root_seed * 1_000_000 + shard_idx * 10_000
        records: list[LabeledRecord] = []
        if shard == HeadKind.FUNC_SIMILARITY.value:
            n_groups = max(1, files_per_shard // len(OPT_TAGS))
            for g in range(n_groups):
                seed = base + g
                compiler = COMPILER_TAGS[g % 2]
                family = g % 9
                for opt in OPT_TAGS:
                    records += generate_program(
                        seed, spec, (compiler, opt, family), shard
                    )
        else:
            for idx in range(files_per_shard):
                seed = base + idx
                profile = (
                    COMPILER_TAGS[idx % 2],
                    OPT_TAGS[(idx // 2) % 3],
                    idx % 9,
                )
                records += generate_program(seed, spec, profile, shard)
        shards[shard] = records
    return shards


# ---------------------------------------------------------------------------
# task datasets


@dataclass
class TaskExample:
    """One training example as raw bytes plus the labels its task needs."""

    data: bytes
    record_id: str
    file_key: str
    project: str
    token_labels: bytes | None = None
    pair: tuple[int, int] | None = None
    family: int | None = None
    name_words: tuple[int, ...] | None = None
    group_id: str | None = None
    variant: str | None = None


@dataclass
class TaskDataset:
    kind: HeadKind
    examples: list[TaskExample]
    class_histogram: dict


def _windows(data: bytes, labels: bytes | None, window_len: int):
    for start in range(0, len(data), window_len):
        chunk = data[start : start + window_len]
        lab = labels[start : start + window_len] if labels is not None else None
        yield start, chunk, lab


def derive_task_dataset(
    records: list[LabeledRecord], kind: HeadKind, window_len: int = 126
) -> TaskDataset:
    """Shape records into what one task head trains on.

    Boundary tasks and masked-byte pretraining get fixed windows over
    whole files; function-level tasks get per-function records;
    provenance and malware classification get whole-file records.
    """
    examples: list[TaskExample] = []
    hist: dict = {}

    def bump(key):
        hist[key] = hist.get(key, 0) + 1

    if kind in (HeadKind.MLM, HeadKind.INST_BOUNDARY, HeadKind.FUNC_BOUNDARY):
        files = [r for r in records if r.is_file]
        if not files:
            raise MissingLabel(f"no whole-file records for {kind.value}")
        for r in files:
            labels = {
                HeadKind.MLM: None,
                HeadKind.INST_BOUNDARY: r.inst_labels,
                HeadKind.FUNC_BOUNDARY: r.func_labels,
            }[kind]
            for start, chunk, lab in _windows(r.data, labels, window_len):
                examples.append(
                    TaskExample(
                        data=chunk,
                        record_id=f"{r.record_id}@{start}",
                        file_key=r.file_key,
                        project=r.project,
                        token_labels=lab,
                    )
                )
                if lab is not None:
                    for v in lab:
                        bump(v)
    elif kind in (HeadKind.FUNC_SIGNATURE, HeadKind.FUNC_NAME, HeadKind.FUNC_SIMILARITY):
        funcs = [r for r in records if not r.is_file]
        if not funcs:
            raise MissingLabel(f"no function records for {kind.value}")
        for r in funcs:
            if kind == HeadKind.FUNC_SIGNATURE:
                if r.arg_count_class is None or r.ret_type is None:
                    raise MissingLabel(f"record {r.record_id} lacks a signature")
                examples.append(
                    TaskExample(
                        data=r.data,
                        record_id=r.record_id,
                        file_key=r.file_key,
                        project=r.project,
                        pair=(r.arg_count_class, r.ret_type),
                    )
                )
                bump(("args", r.arg_count_class))
                bump(("ret", r.ret_type))
            elif kind == HeadKind.FUNC_NAME:
                if not r.name_words:
                    raise MissingLabel(f"record {r.record_id} lacks name words")
                examples.append(
                    TaskExample(
                        data=r.data,
                        record_id=r.record_id,
                        file_key=r.file_key,
                        project=r.project,
                        name_words=r.name_words,
                    )
                )
                for w in r.name_words:
                    bump(w)
            else:
                if r.group_id is None:
                    raise MissingLabel(f"record {r.record_id} lacks a group id")
                examples.append(
                    TaskExample(
                        data=r.data,
                        record_id=r.record_id,
                        file_key=r.file_key,
                        project=r.project,
                        group_id=r.group_id,
                        variant=r.opt_tag,
                    )
                )
                bump(r.group_id)
    elif kind in (HeadKind.COMPILER_PROV, HeadKind.MALWARE_CLASS):
        files = [r for r in records if r.is_file]
        if not files:
            raise MissingLabel(f"no whole-file records for {kind.value}")
        for r in files:
            if kind == HeadKind.COMPILER_PROV:
                pair = (COMPILER_TAGS.index(r.compiler_tag), OPT_TAGS.index(r.opt_tag))
                examples.append(
                    TaskExample(
                        data=r.data,
                        record_id=r.record_id,
                        file_key=r.file_key,
                        project=r.project,
                        pair=pair,
                    )
                )
                bump((r.compiler_tag, r.opt_tag))
            else:
                examples.append(
                    TaskExample(
                        data=r.data,
                        record_id=r.record_id,
                        file_key=r.file_key,
                        project=r.project,
                        family=r.family_id,
                    )
                )
                bump(r.family_id)
    else:  # pragma: no cover
        raise ValueError(f"unknown task kind {kind}")

    log.info("%s dataset: %d examples, class histogram %s", kind.value, len(examples), hist)
    return TaskDataset(kind=kind, examples=examples, class_histogram=hist)


# ---------------------------------------------------------------------------
# persistence

_REQUIRED_FIELDS = (
    "record_id",
    "shard",
    "project",
    "file_key",
    "compiler",
    "opt",
    "family",
    "is_file",
    "bytes",
    "inst",
    "func",
)
_OPTIONAL_FIELDS = ("args", "ret", "name", "group")


def _labels_to_text(labels: bytes) -> str:
    return "".join(str(v) for v in labels)


def _labels_from_text(text: str, lineno: int) -> bytes:
    try:
        values = [int(c) for c in text]
    except ValueError:
        raise ParseError(f"non-digit label character in {text[:16]!r}", lineno)
    if any(v > 9 for v in values):  # pragma: no cover
        raise ParseError("label value out of range", lineno)
    return bytes(values)


def record_to_line(r: LabeledRecord) -> str:
    parts = [
        f"record_id={r.record_id}",
        f"shard={r.shard}",
        f"project={r.project}",
        f"file_key={r.file_key}",
        f"compiler={r.compiler_tag}",
        f"opt={r.opt_tag}",
        f"family={r.family_id}",
        f"is_file={int(r.is_file)}",
        f"bytes={r.data.hex()}",
        f"inst={_labels_to_text(r.inst_labels)}",
        f"func={_labels_to_text(r.func_labels)}",
    ]
    if r.arg_count_class is not None:
        parts.append(f"args={r.arg_count_class}")
    if r.ret_type is not None:
        parts.append(f"ret={r.ret_type}")
    if r.name_words:
        parts.append("name=" + ",".join(str(w) for w in r.name_words))
    if r.group_id is not None:
        parts.append(f"group={r.group_id}")
    return " ".join(parts)


def record_from_line(line: str, lineno: int = 0) -> LabeledRecord:
    fields: dict[str, str] = {}
    for token in line.split():
        name, sep, value = token.partition("=")
        if not sep:
            raise ParseError(f"token {token!r} is not name=value", lineno)
        if name not in _REQUIRED_FIELDS and name not in _OPTIONAL_FIELDS:
            raise ParseError(f"unknown field {name!r}", lineno)
        if name in fields:
            raise ParseError(f"duplicate field {name!r}", lineno)
        fields[name] = value
    missing = [f for f in _REQUIRED_FIELDS if f not in fields]
    if missing:
        raise ParseError(f"missing fields {missing}", lineno)
    try:
        data = bytes.fromhex(fields["bytes"])
    except ValueError:
        raise ParseError("bad hex in bytes field", lineno)
    inst = _labels_from_text(fields["inst"], lineno)
    func = _labels_from_text(fields["func"], lineno)
    if len(inst) != len(data) or len(func) != len(data):
        raise ParseError(
            f"label length {len(inst)}/{len(func)} does not match "
            f"byte length {len(data)}",
            lineno,
        )
    try:
        family = int(fields["family"])
        is_file = bool(int(fields["is_file"]))
        args = int(fields["args"]) if "args" in fields else None
        ret = int(fields["ret"]) if "ret" in fields else None
    except ValueError:
        raise ParseError("non-integer numeric field", lineno)
    name_words = None
    if "name" in fields:
        try:
            name_words = tuple(int(w) for w in fields["name"].split(","))
        except ValueError:
            raise ParseError("bad name word list", lineno)
    try:
        return LabeledRecord(
            record_id=fields["record_id"],
            shard=fields["shard"],
            project=fields["project"],
            file_key=fields["file_key"],
            compiler_tag=fields["compiler"],
            opt_tag=fields["opt"],
            family_id=family,
            data=data,
            inst_labels=inst,
            func_labels=func,
            is_file=is_file,
            arg_count_class=args,
            ret_type=ret,
            name_words=name_words,
            group_id=fields.get("group"),
        )
    except ValueError as e:
        raise ParseError(str(e), lineno)


def write_corpus(records: list[LabeledRecord], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(record_to_line(r))
            fh.write("\n")


def read_corpus(path) -> list[LabeledRecord]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            records.append(record_from_line(line, lineno))
    return records


def corpus_digest(records: list[LabeledRecord]) -> str:
    h = hashlib.sha256()
    for r in records:
        h.update(record_to_line(r).encode())
        h.update(b"\n")
    return h.hexdigest()


# ---------------------------------------------------------------------------
# splits


def split(
    records: list,
    mode: str,
    ratio: float,
    seed: int,
) -> tuple[list, list]:
    """Key-grouped partition: whole files or whole projects, never records.

    Works on anything carrying file_key/project attributes, so derived
    task examples split with the same hygiene as raw records.
    """
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"split ratio must be in (0, 1), got {ratio}")
    if mode == "binary":
        key_of = lambda r: r.file_key  # noqa: E731
    elif mode == "project":
        key_of = lambda r: r.project  # noqa: E731
    else:
        raise ValueError(f"unknown split mode {mode!r}")
    keys = sorted({key_of(r) for r in records})
    if len(keys) < 2:
        raise CannotSplit(f"need at least 2 {mode} keys, have {len(keys)}")
    rng = np.random.default_rng(seed)
    order = [keys[i] for i in rng.permutation(len(keys))]
    n_a = min(len(keys) - 1, max(1, int(np.floor(ratio * len(keys) + 0.5))))
    part_a_keys = set(order[:n_a])
    part_a = [r for r in records if key_of(r) in part_a_keys]
    part_b = [r for r in records if key_of(r) not in part_a_keys]
    return part_a, part_b
