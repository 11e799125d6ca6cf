#pragma once

#include <string>

#include "langsg/checkpoint.hpp"
#include "langsg/finetune.hpp"
#include "langsg/pretrain.hpp"

namespace langsg {

// Architecture strings stored in checkpoint fingerprints. The encoder field
// covers only the learned architecture; point caps and sampling seed are
// run settings.
std::string describe_projector(const ProjectorConfig& c);  // "h1024/D512"
std::string describe_heads(const HeadConfig& c, const LabelVocabulary& vocab);  // "h512/C10/P7"

/// Fills the architecture fields of `base` from an EncoderConfig::describe()
/// string. Throws CheckpointError when the string is malformed.
EncoderConfig parse_encoder(const std::string& describe, EncoderConfig base = {});
ProjectorConfig parse_projector(const std::string& describe);

std::string pretrain_fingerprint(const EncoderConfig& encoder, const ProjectorConfig& projector);
std::string finetune_fingerprint(const EncoderConfig& encoder, const HeadConfig& head, const LabelVocabulary& vocab,
                                 const ProjectorConfig* kept_projector);

Checkpoint to_checkpoint(PretrainModel<float>& model, const ProjectorConfig& projector, const Adam<float>* optimizer);
Checkpoint to_checkpoint(FinetuneModel<float>& model, const HeadConfig& head, const LabelVocabulary& vocab,
                         const ProjectorConfig* kept_projector, const Adam<float>* optimizer);

/// Rebuilds a pre-trained model from its checkpoint. `sampling` provides the
/// non-architectural encoder settings. Throws CheckpointError for a
/// fine-tuning checkpoint or missing / misshapen tensors.
PretrainModel<float> load_pretrain_model(const Checkpoint& ckpt, const EncoderConfig& sampling = {});
/// Requires a fine-tuning checkpoint whose head widths match `vocab`.
FinetuneModel<float> load_finetune_model(const Checkpoint& ckpt, const LabelVocabulary& vocab,
                                         const EncoderConfig& sampling = {});

/// Restores Adam moments and step count stored in the checkpoint.
void load_optimizer(const Checkpoint& ckpt, Adam<float>& optimizer);

}  // namespace langsg
