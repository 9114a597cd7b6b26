import numpy as np
import pytest

from autodiff import Tensor
from backbone import (
    BackboneParams,
    MiniClip,
    TokenSequence,
    contrastive_pretrain,
    load_checkpoint,
    save_checkpoint,
)
from backbone import vocab
from backbone.pretrain import infonce_loss
from errors import ArtifactError, ConfigError, ContractError, TemplateError
from models import PretrainConfig
from store import CHECKPOINT_MAGIC, DATASET_MAGIC, read_container, write_container
from training import seed_all


def sequence(tokens: np.ndarray) -> TokenSequence:
    """Tokens with an empty prompt span at the end."""
    return TokenSequence(Tensor(tokens), prompt_start=tokens.shape[0])


class TestVocab:
    def test_render_places_class_tokens_and_padding(self):
        ids = vocab.render(vocab.FROZEN_TEMPLATE, [0, 3], text_len=9, vocab_size=16)
        assert ids.shape == (9, 2)
        assert ids[5].tolist() == [vocab.CLASS_OFFSET, vocab.CLASS_OFFSET + 3]
        assert ids[7:].tolist() == [[vocab.PAD, vocab.PAD]] * 2

    def test_template_needs_exactly_one_slot(self):
        with pytest.raises(TemplateError):
            vocab.render((vocab.SOS, vocab.EOS), [0], text_len=4, vocab_size=16)

    def test_template_must_fit(self):
        with pytest.raises(TemplateError):
            vocab.render(vocab.learnable_template(8), [0], text_len=6, vocab_size=16)

    def test_class_outside_vocabulary(self):
        with pytest.raises(ContractError):
            vocab.class_token(8, vocab_size=16)


class TestMiniClip:
    def test_embeddings_are_unit_rows(self, frozen_clip):
        patches = np.random.default_rng(0).normal(size=(5, 3, 4))
        image = frozen_clip.encode_frozen_image(patches).data
        text = frozen_clip.encode_frozen_text([0, 1, 2]).data
        assert image.shape == (5, 8)
        assert text.shape == (3, 8)
        np.testing.assert_allclose(np.linalg.norm(image, axis=1), 1.0)
        np.testing.assert_allclose(np.linalg.norm(text, axis=1), 1.0)

    def test_patch_shape_mismatch(self, frozen_clip):
        with pytest.raises(ConfigError):
            frozen_clip.embed_image(np.zeros((2, 4, 4)))

    def test_learnable_template_prompt_span(self, frozen_clip):
        seq = frozen_clip.embed_text([0, 1], vocab.learnable_template(3))
        assert (seq.prompt_start, seq.prompt_length) == (1, 3)
        assert seq.pool_index == 5

    def test_image_sequence_has_empty_prompt_span_at_the_end(self, frozen_clip):
        seq = frozen_clip.embed_image(np.zeros((2, 3, 4)))
        assert seq.length == frozen_clip.config.visual_tokens
        assert seq.prompt_start == seq.length

    def test_frozen_encodings_need_frozen_backbone(self, frozen_clip):
        clip = MiniClip(frozen_clip.params.unfreeze())
        with pytest.raises(ContractError):
            clip.encode_frozen_text([0])
        with pytest.raises(ContractError):
            frozen_clip.encode_frozen_text([])

    def test_text_tower_is_causal(self, frozen_clip):
        rng = np.random.default_rng(0)
        tokens = rng.normal(size=(6, 2, 8))
        changed = tokens.copy()
        changed[-1] += rng.normal(size=8)
        before = frozen_clip.text.layer(1, sequence(tokens))
        after = frozen_clip.text.layer(1, sequence(changed))
        np.testing.assert_allclose(
            before.tokens.data[:-1], after.tokens.data[:-1], rtol=0, atol=1e-12
        )
        assert not np.allclose(before.tokens.data[-1], after.tokens.data[-1])

    def test_visual_tower_attends_everywhere(self, frozen_clip):
        rng = np.random.default_rng(0)
        tokens = rng.normal(size=(4, 1, 8))
        changed = tokens.copy()
        changed[-1] += rng.normal(size=8)
        before = frozen_clip.visual.layer(1, sequence(tokens))
        after = frozen_clip.visual.layer(1, sequence(changed))
        assert not np.allclose(before.tokens.data[0], after.tokens.data[0])



def seed_one_clip(config) -> MiniClip:
    return MiniClip(BackboneParams.initialize(config, seed_all(1).init).freeze())


class TestGoldenEncodings:
    @pytest.fixture
    def patches(self):
        return np.random.default_rng(1).normal(size=(3, 3, 4))

    def test_embed_image(self, backbone_config, patches, golden):
        tokens = seed_one_clip(backbone_config).embed_image(patches).tokens.data
        again = seed_one_clip(backbone_config).embed_image(patches).tokens.data
        np.testing.assert_array_equal(tokens, again)
        golden("embed_image_seed1", tokens)

    def test_encode_frozen_text(self, backbone_config, golden):
        classes = [0, 1, 2, 3]
        text = seed_one_clip(backbone_config).encode_frozen_text(classes).data
        again = seed_one_clip(backbone_config).encode_frozen_text(classes).data
        np.testing.assert_array_equal(text, again)
        golden("encode_frozen_text_seed1", text)

    def test_encode_frozen_image(self, backbone_config, patches, golden):
        image = seed_one_clip(backbone_config).encode_frozen_image(patches).data
        again = seed_one_clip(backbone_config).encode_frozen_image(patches).data
        np.testing.assert_array_equal(image, again)
        golden("encode_frozen_image_seed1", image)

class TestParams:
    def test_freeze_clears_requires_grad(self, backbone_config):
        params = BackboneParams.initialize(backbone_config, np.random.default_rng(0))
        frozen = params.freeze()
        assert frozen.frozen
        assert not any(t.requires_grad for t in frozen.named_parameters().values())
        assert frozen.checksum() == params.checksum()

    def test_dotted_names(self, backbone_config):
        names = BackboneParams.initialize(backbone_config).named_parameters()
        assert "visual.layers.0.w_q" in names
        assert "text.ln_post.gain" in names


class TestCheckpoint:
    def test_round_trip(self, tmp_path, frozen_clip):
        path = tmp_path / "backbone.sepckpt"
        save_checkpoint(frozen_clip.params, path)
        loaded = load_checkpoint(path)
        assert loaded.frozen
        assert loaded.config == frozen_clip.config
        original = frozen_clip.params.named_parameters()
        for name, tensor in loaded.named_parameters().items():
            np.testing.assert_allclose(
                tensor.data, original[name].data, rtol=1e-6, atol=1e-7
            )

    def test_save_load_save_is_byte_identical(self, tmp_path, frozen_clip):
        first, second = tmp_path / "first.sepckpt", tmp_path / "second.sepckpt"
        save_checkpoint(frozen_clip.params, first)
        save_checkpoint(load_checkpoint(first), second)
        assert first.read_bytes() == second.read_bytes()

    def test_wrong_magic(self, tmp_path):
        path = tmp_path / "data.sepdata"
        write_container(path, DATASET_MAGIC, {}, {"x": np.zeros(2)})
        with pytest.raises(ArtifactError):
            load_checkpoint(path)

    def test_truncated_file(self, tmp_path, frozen_clip):
        path = tmp_path / "backbone.sepckpt"
        save_checkpoint(frozen_clip.params, path)
        path.write_bytes(path.read_bytes()[:-16])
        with pytest.raises(ArtifactError):
            read_container(path, CHECKPOINT_MAGIC)

    def test_header_disagrees_with_tensors(self, tmp_path, frozen_clip):
        path = tmp_path / "backbone.sepckpt"
        arrays = {n: t.data for n, t in frozen_clip.params.named_parameters().items()}
        arrays["proj_extra"] = np.zeros(3)
        meta = {"config": frozen_clip.config.model_dump(), "frozen": True}
        write_container(path, CHECKPOINT_MAGIC, meta, arrays)
        with pytest.raises(ArtifactError):
            load_checkpoint(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ArtifactError):
            load_checkpoint(tmp_path / "absent.sepckpt")


class TestPretrain:
    def test_updates_parameters_deterministically(self, backbone_config, dataset):
        config = PretrainConfig(steps=2, batch_size=4, seed=3)

        def run():
            rng = np.random.default_rng(0)
            params = BackboneParams.initialize(backbone_config, rng)
            return contrastive_pretrain(params, dataset, config)

        first, second = run(), run()
        initial = BackboneParams.initialize(backbone_config, np.random.default_rng(0))
        assert not first.frozen
        assert first.checksum() == second.checksum()
        assert first.checksum() != initial.checksum()

    def test_zero_steps_is_identity(self, backbone_config, dataset):
        params = BackboneParams.initialize(backbone_config, np.random.default_rng(0))
        result = contrastive_pretrain(params, dataset, PretrainConfig(steps=0))
        assert result.checksum() == params.checksum()

    def test_refuses_frozen_backbone(self, frozen_clip, dataset):
        with pytest.raises(ContractError):
            contrastive_pretrain(frozen_clip.params, dataset, PretrainConfig(steps=1))

    def test_loss_falls_over_training(self, backbone_config, dataset):
        classes = dataset.class_ids

        def mean_loss(params: BackboneParams) -> float:
            clip = MiniClip(params)
            losses = []
            for j in range(dataset.spec.samples_per_class):
                ids = [int(dataset.ids_of(c)[j]) for c in classes]
                patches, _ = dataset.batch(ids)
                losses.append(infonce_loss(clip, patches, classes).item())
            return float(np.mean(losses))

        initial = BackboneParams.initialize(backbone_config, seed_all(1).init)
        config = PretrainConfig(steps=200, lr=5e-3, batch_size=4, seed=1)
        trained = contrastive_pretrain(initial, dataset, config)
        assert mean_loss(trained) < mean_loss(initial)
