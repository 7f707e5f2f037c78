"""Assembly of encoders, memories, fusion and heads into the ablation variants.

========  ==================================  ==================
variant   video features for fusion           question features
========  ==================================  ==================
EF        one encoder over [appearance;motion]  encoded words
LF        concat of two stream encodings      encoded words
VM        heterogeneous memory ``h_v``        encoded words
QM        concat of two stream encodings      question memory ``h_q``
VQ        heterogeneous memory ``h_v``        question memory ``h_q``
========  ==================================  ==================
"""

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .config import ModelConfig
from .encoders import EncodedSequence, embed, encode, init_lstm, length_mask, lstm_banks
from .fusion import FusionReasoner, init_fusion
from .heads import init_heads, mc_loss, mc_score, open_logits, open_loss, predict
from .params import ParameterSet, glorot_uniform
from .question_memory import QuestionMemory, init_question_memory
from .visual_memory import VisualMemory, init_visual_memory


@dataclass
class ForwardOutput:
    s_A: T.Tensor
    s_L: T.Tensor
    logits: T.Tensor  # (B, C) open-ended logits or (B, K) candidate scores
    traces: dict = field(default_factory=dict)

    @property
    def predictions(self):
        return predict(self.logits)


def _uses_visual_memory(variant):
    return variant in ("VM", "VQ")


def _uses_question_memory(variant):
    return variant in ("QM", "VQ")


def build_params(cfg, seed=None):
    """Initialise every parameter the configured variant uses."""
    rng = np.random.default_rng([cfg.seed if seed is None else seed, 1])
    params = ParameterSet()
    H, D = cfg.encoder_hidden, cfg.memory_dim
    if cfg.variant == "EF":
        init_lstm(params.scope("enc.ef"), rng, cfg.appearance_dim + cfg.motion_dim, H, cfg.encoder_layers)
        video_dim, finals = H, {"ef": H}
    else:
        init_lstm(params.scope("enc.m"), rng, cfg.motion_dim, H, cfg.encoder_layers)
        init_lstm(params.scope("enc.a"), rng, cfg.appearance_dim, H, cfg.encoder_layers)
        video_dim, finals = 2 * H, {"m": H, "a": H}
    params.add("emb", glorot_uniform(rng, (cfg.vocab_size, cfg.embed_dim)))
    init_lstm(params.scope("enc.q"), rng, cfg.embed_dim, H, cfg.encoder_layers)
    question_dim = H
    if _uses_visual_memory(cfg.variant):
        init_visual_memory(params.scope("vm"), rng, H, D, cfg.visual_slots)
        video_dim = D
    if _uses_question_memory(cfg.variant):
        init_question_memory(params.scope("qm"), rng, H, D, cfg.question_slots)
        question_dim = D
    init_fusion(params.scope("fu"), rng, {"v": video_dim, "q": question_dim}, cfg.ctrl_dim, cfg.att_dim, finals)
    rep_dim = cfg.ctrl_dim + sum(finals.values())
    if cfg.task == "open" and cfg.open_head_input == "s_L":
        rep_dim = cfg.ctrl_dim
    init_heads(params.scope("head"), rng, rep_dim, cfg.task, cfg.num_classes)
    if cfg.precision == "float32":
        params.astype(np.float32)
    return params


class HMEModel:
    """Video QA network over a :class:`ParameterSet`."""

    def __init__(self, config, params=None):
        self.cfg = config if isinstance(config, ModelConfig) else ModelConfig.from_dict(config)
        self.params = params if params is not None else build_params(self.cfg)
        cfg = self.cfg
        self.vm = (VisualMemory(self.params.scope("vm"), cfg.visual_slots, cfg.memory_dim, cfg.strict_eq)
                   if _uses_visual_memory(cfg.variant) else None)
        self.qm = (QuestionMemory(self.params.scope("qm"), cfg.question_slots, cfg.memory_dim, cfg.strict_eq)
                   if _uses_question_memory(cfg.variant) else None)
        self.fusion = FusionReasoner(self.params.scope("fu"), cfg.ctrl_dim)

    @property
    def dtype(self):
        return np.float32 if self.cfg.precision == "float32" else np.float64

    def _banks(self, name):
        return lstm_banks(self.params.scope(name), self.cfg.encoder_layers)

    def encode_video(self, batch):
        """Returns ``(video_features, final_streams, visual_traces)``."""
        app = T.Tensor(batch.appearance, dtype=self.dtype)
        mot = T.Tensor(batch.motion, dtype=self.dtype)
        if self.cfg.variant == "EF":
            both = T.Tensor(np.concatenate([batch.appearance, batch.motion], axis=-1), dtype=self.dtype)
            o = encode(both, batch.v_len, self._banks("enc.ef"))
            return o.outputs, [(o, "ef")], []
        o_m = encode(mot, batch.v_len, self._banks("enc.m"))
        o_a = encode(app, batch.v_len, self._banks("enc.a"))
        finals = [(o_m, "m"), (o_a, "a")]
        if self.vm is not None:
            h_v, traces = self.vm.process(o_m, o_a)
            return h_v, finals, traces
        return T.concat([o_m.outputs, o_a.outputs], axis=-1), finals, []

    def encode_question(self, tokens, q_len):
        words = embed(tokens, self.params["emb"])
        o_q = encode(words, q_len, self._banks("enc.q"))
        if self.qm is not None:
            h_q, traces = self.qm.process(o_q)
            return h_q, traces
        return o_q.outputs, []

    def forward(self, batch, steps=None):
        cfg = self.cfg
        steps = cfg.reasoning_steps if steps is None else steps
        video, finals, v_traces = self.encode_video(batch)
        mask_v = length_mask(batch.v_len, video.shape[1])
        if batch.task == "mc":
            rep = np.repeat(np.arange(len(batch)), batch.num_choices)
            video = T.take(video, rep)
            mask_v = mask_v[rep]
            finals = [(EncodedSequence(T.take(o.outputs, rep), o.valid_len[rep]), name) for o, name in finals]
        question, q_traces = self.encode_question(batch.tokens, batch.q_len)
        mask_q = length_mask(batch.q_len, question.shape[1])
        s_L, f_traces, _ = self.fusion.reason(video, mask_v, question, mask_q, steps)
        s_A = self.fusion.answer_representation(s_L, finals)
        head = self.params.scope("head")
        if batch.task == "mc":
            scores = mc_score(s_A, head.scope("mc"))
            logits = T.reshape(scores, (len(batch), batch.num_choices))
        else:
            rep_in = s_L if cfg.open_head_input == "s_L" else s_A
            logits = open_logits(rep_in, head.scope("open"))
        traces = {"visual": v_traces, "question": q_traces, "fusion": f_traces}
        return ForwardOutput(s_A, s_L, logits, traces)

    def loss(self, batch, out=None):
        out = out if out is not None else self.forward(batch)
        if batch.task == "mc":
            return mc_loss(out.logits, batch.positive, self.cfg.margin), out
        return open_loss(out.logits, batch.labels), out

    @staticmethod
    def targets(batch):
        return batch.positive if batch.task == "mc" else batch.labels
