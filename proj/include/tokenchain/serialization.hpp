// Copyright 2026 The TokenChain Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//    http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// JSON mappings for configuration, world-description and report types.

#include <json.hpp>

#include "tokenchain/asr.hpp"
#include "tokenchain/chain.hpp"
#include "tokenchain/corpus.hpp"
#include "tokenchain/nn.hpp"
#include "tokenchain/s2a.hpp"
#include "tokenchain/t2s.hpp"
#include "tokenchain/trainer.hpp"

namespace tokenchain::corpus {

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(Vocabulary, text_size, semantic_size,
                                                acoustic_size, num_acoustic_layers)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(Template, tokens, prob)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ChannelSpec, expansions, noise, jitter,
                                                domain_map, speaker_count, acoustic_noise,
                                                acoustic_key)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(TextModel, initial, transition)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ChannelParams, noise, jitter, speaker_count,
                                                acoustic_noise, max_templates,
                                                max_template_len)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ShiftParams, noise, jitter, swapped_ids)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SplitSizes, pretrain, chain_train, chain_dev,
                                                chain_test, shifted_train, shifted_dev,
                                                shifted_test)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(CorpusConfig, vocab, channel, shift, sizes,
                                                min_len, max_len, seed, seed_bases, seed_block,
                                                with_shifted)

}  // namespace tokenchain::corpus

namespace tokenchain::asr {
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(AsrConfig, text_size, semantic_size, d_model,
                                                heads, enc_layers, dec_layers, ffn, max_len, seed)
}  // namespace tokenchain::asr

namespace tokenchain::t2s {
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(T2sConfig, text_size, semantic_size, d_model,
                                                heads, layers, ffn, max_len, seed)
}  // namespace tokenchain::t2s

namespace tokenchain::s2a {
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(S2aConfig, semantic_size, acoustic_size,
                                                num_layers, d_model, heads, blocks, ffn, max_len,
                                                seed)
}  // namespace tokenchain::s2a

namespace tokenchain::nn {
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(AdamWConfig, beta1, beta2, eps, weight_decay,
                                                max_grad_norm)
}  // namespace tokenchain::nn

namespace tokenchain::chain {
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(DwaConfig, alpha_w0, alpha_w1, alpha_max, e_ramp,
                                                temperature)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(DwaState, asr_means, t2s_means)
}  // namespace tokenchain::chain

namespace tokenchain::trainer {

NLOHMANN_JSON_SERIALIZE_ENUM(RunKind, {{RunKind::pretrain_asr, "pretrain_asr"},
                                       {RunKind::pretrain_t2s, "pretrain_t2s"},
                                       {RunKind::baseline, "baseline"},
                                       {RunKind::chain, "chain"},
                                       {RunKind::adapt, "adapt"},
                                       {RunKind::s2a, "s2a"}})
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ModelConfigs, asr, t2s, s2a)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(
    TrainConfig, kind, epochs, batch_size, lr, chain_asr_lr, warmup, patience, early_stopping,
    estimator, tau, alpha, dwa, dwa_source, dwa_average, eta, label_smoothing, ce_tau, prompt_lo,
    prompt_hi, freeze_t2s, cfg_drop, s2a_decode_steps, dev_limit, eval_t2s_each_epoch,
    train_split, dev_split, track_splits, eval_splits, seed, adamw, models)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SplitScores, wer, cer, t2s_wer, s2a_accuracy,
                                                s2a_majority, ref_tokens)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(EpochRecord, epoch, step, l_asr, l_t2s, l_final,
                                                l_ce, l_ctc, l_s2a, l_asr_utt, l_t2s_utt, alpha,
                                                tau, text_error, lr, dev, seconds)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(RunReport, name, kind, estimator, tau, seed,
                                                config_hash, epochs, best_epoch, stopped_early,
                                                final_scores, initial_scores,
                                                wall_seconds)

}  // namespace tokenchain::trainer
