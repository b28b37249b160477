import numpy as np
from pytest import raises

from tokalign import (
    AlignmentModel,
    CheckpointError,
    ConfigurationError,
    DimensionError,
    EmptySequenceError,
    EncoderConfig,
    InputError,
    VocabularyError,
    encode_text,
    encode_video,
    fuse,
)
from tokalign.common import CLS_ID, SEP_ID, TEXT_TYPE, VIDEO_TYPE
from tokalign.tensor import no_grad
from tokalign.util import Rng

from ._util import tiny_encoder


def _model(**kwargs):
    return AlignmentModel(tiny_encoder(vocab_size=12), seed=1, **kwargs)


def _videos(rng, lengths, width=4):
    return [rng.normal(1.0, (m, width)) for m in lengths]


class EncoderConfig_:
    def defaults_are_desk_scale(self):
        cfg = EncoderConfig()
        assert cfg.d == 32
        assert (cfg.max_video_tokens, cfg.max_text_tokens) == (8, 12)
        assert cfg.ffn_width == 128

    def full_scale_documents_full_size_settings(self):
        cfg = EncoderConfig.full_scale()
        assert (cfg.d, cfg.text_layers, cfg.heads) == (768, 12, 12)
        assert (cfg.max_video_tokens, cfg.max_text_tokens) == (48, 30)

    def equality_is_by_value(self):
        assert tiny_encoder() == tiny_encoder()
        assert tiny_encoder() != tiny_encoder(d=16)

    class validate:
        def heads_must_divide_width(self):
            with raises(ConfigurationError):
                tiny_encoder(d=6, heads=4, vocab_size=12).validate()

        def text_must_fit_cls_word_and_sep(self):
            with raises(ConfigurationError):
                tiny_encoder(max_text_tokens=2, vocab_size=12).validate()

        def vocabulary_must_hold_reserved_tokens(self):
            with raises(ConfigurationError):
                tiny_encoder(vocab_size=3).validate()


class AlignmentModel_:
    def same_seed_same_parameters(self):
        first = _model().state_dict()
        second = _model().state_dict()
        assert list(first) == list(second)
        assert all(np.array_equal(first[k], second[k]) for k in first)

    def parameter_names_are_stable(self):
        names = [name for name, _ in _model().named_parameters()]
        assert names[0] == "video.proj.weight"
        assert "head.w" in names
        assert len(names) == len(set(names))

    def float32_parameters(self):
        model = _model(dtype="float32")
        assert all(p.dtype == np.float32 for p in model.parameters())

    def unknown_dtype_is_a_configuration_error(self):
        with raises(ConfigurationError):
            _model(dtype="float16")

    def models_without_fusion_have_no_fusion_parameters(self):
        model = _model(fusion=False)
        assert not model.has_fusion
        names = [name for name, _ in model.named_parameters()]
        assert not any(n.startswith(("fusion.", "head.")) for n in names)

    class load_state_dict:
        def rejects_missing_entries(self):
            state = _model().state_dict()
            state.pop("head.w")
            with raises(CheckpointError):
                _model().load_state_dict(state)

        def rejects_wrong_shapes(self):
            state = _model().state_dict()
            state["head.w"] = np.zeros(3)
            with raises(CheckpointError):
                _model().load_state_dict(state)

    class encode:
        def shapes(self):
            rng = Rng(0)
            model = _model()
            batch = model.encode(
                _videos(rng, [2, 4, 3]),
                [
                    [CLS_ID, 5, SEP_ID],
                    [CLS_ID, 6, 7, 8, SEP_ID],
                    [CLS_ID, 4, SEP_ID],
                ],
            )
            assert batch.X.shape == (3, 4, 8)
            assert batch.Y.shape == (3, 5, 8)
            assert batch.x_bar.shape == (3, 8)
            assert batch.y_bar.shape == (3, 8)
            assert batch.video_mask.sum(axis=1).tolist() == [2, 4, 3]
            assert batch.text_mask.sum(axis=1).tolist() == [3, 5, 3]

        def pooled_video_is_mean_over_real_frames(self):
            rng = Rng(0)
            model = _model()
            videos = _videos(rng, [2, 4])
            with no_grad():
                batch = model.encode(videos, [[CLS_ID, SEP_ID]] * 2)
            X = batch.X.data
            assert np.allclose(batch.x_bar.data[0], X[0, :2].mean(axis=0))
            assert np.allclose(batch.x_bar.data[1], X[1].mean(axis=0))

        def padding_does_not_change_outputs(self):
            rng = Rng(2)
            model = _model()
            short, long = _videos(rng, [1, 4])
            with no_grad():
                alone = model.encode([short], [[CLS_ID, 5, SEP_ID]])
                padded = model.encode(
                    [short, long],
                    [[CLS_ID, 5, SEP_ID], [CLS_ID, 5, 6, 7, 8, 9, SEP_ID]],
                )
            assert np.allclose(alone.x_bar.data[0], padded.x_bar.data[0])
            assert np.allclose(alone.y_bar.data[0], padded.y_bar.data[0])

        def text_summary_is_cls_output(self):
            model = _model()
            with no_grad():
                tokens, cls = encode_text(model, [CLS_ID, 4, 5, SEP_ID])
            assert tokens.shape == (4, 8)
            assert np.array_equal(cls.data, tokens.data[0])

        def token_order_matters(self):
            model = _model()
            with no_grad():
                _, forward = encode_text(model, [CLS_ID, 4, 5, 6, SEP_ID])
                _, backward = encode_text(model, [CLS_ID, 6, 5, 4, SEP_ID])
            assert not np.allclose(forward.data, backward.data)

        def single_video(self):
            model = _model()
            tokens, pooled = encode_video(model, np.ones((3, 4)))
            assert tokens.shape == (3, 8)
            assert pooled.shape == (8,)

    class encode_errors:
        def video_without_frames(self):
            with raises(EmptySequenceError):
                encode_video(_model(), np.zeros((0, 4)))

        def video_of_the_wrong_width(self):
            with raises(DimensionError):
                encode_video(_model(), np.zeros((2, 5)))

        def video_longer_than_configured(self):
            with raises(InputError):
                encode_video(_model(), np.zeros((5, 4)))

        def text_without_cls(self):
            with raises(InputError):
                encode_text(_model(), [4, 5, SEP_ID])

        def text_longer_than_configured(self):
            with raises(InputError):
                encode_text(_model(), [CLS_ID] + [4] * 9 + [SEP_ID])

        def token_outside_vocabulary(self):
            with raises(VocabularyError) as info:
                encode_text(_model(), [CLS_ID, 12, SEP_ID])
            assert info.value.token_id == 12
            assert info.value.vocab_size == 12

        def empty_batches(self):
            with raises(EmptySequenceError):
                _model().encode([], [])

    class fuse_:
        def output_covers_both_sequences(self):
            model = _model()
            with no_grad():
                video, _ = encode_video(model, np.ones((3, 4)))
                text, _ = encode_text(model, [CLS_ID, 4, 5, SEP_ID])
                out = fuse(model, video, text)
            assert out.z.shape == (7, 8)
            assert out.z_cls.shape == (8,)
            # text goes first, so [CLS] is position 0
            assert np.array_equal(out.z_cls.data, out.z.data[0])

        def video_first_moves_cls(self):
            model = AlignmentModel(
                tiny_encoder(vocab_size=12, fusion_text_first=False), seed=1
            )
            with no_grad():
                video, _ = encode_video(model, np.ones((3, 4)))
                text, _ = encode_text(model, [CLS_ID, 4, SEP_ID])
                out = fuse(model, video, text)
            assert np.array_equal(out.z_cls.data, out.z.data[3])

        def batched_pairs_match_single_fusion(self):
            rng = Rng(5)
            model = _model()
            with no_grad():
                batch = model.encode(
                    _videos(rng, [2, 3]),
                    [[CLS_ID, 4, SEP_ID], [CLS_ID, 5, 6, SEP_ID]],
                )
                many = model.fuse_pairs(batch, [(1, 0), (0, 1)])
                one = fuse(model, batch.X[1], batch.Y[0][:3])
            assert np.allclose(many.z_cls.data[0], one.z_cls.data)

        def type_embeddings_tell_the_modalities_apart(self):
            model = _model()
            with no_grad():
                video, _ = encode_video(model, np.ones((3, 4)))
                text, _ = encode_text(model, [CLS_ID, 4, 5, SEP_ID])
                before = fuse(model, video, text)
                types = model.fusion.types.weight.data
                types[...] = types[::-1].copy()
                after = fuse(model, video, text)
            assert not np.allclose(before.z.data, after.z.data)

        def zeroed_blocks_pass_the_embedded_input_through(self):
            model = _model()
            for block in model.fusion.blocks:
                for p in block.parameters():
                    p.data[...] = 0.0
            with no_grad():
                video, _ = encode_video(model, np.ones((3, 4)))
                text, _ = encode_text(model, [CLS_ID, 4, 5, SEP_ID])
                out = fuse(model, video, text)
            fusion = model.fusion
            want = (
                text.data[0]
                + fusion.types.weight.data[TEXT_TYPE]
                + fusion.positions.weight.data[0]
            )
            assert np.allclose(out.z_cls.data, want)
            # first video frame follows the four text tokens
            first_frame = (
                video.data[0]
                + fusion.types.weight.data[VIDEO_TYPE]
                + fusion.positions.weight.data[4]
            )
            assert np.allclose(out.z.data[4], first_frame)

        def needs_fusion_parameters(self):
            model = _model(fusion=False)
            with raises(CheckpointError):
                fuse(model, np.ones((1, 8)), np.ones((3, 8)))
