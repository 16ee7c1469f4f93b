// cyclevc/eval.hpp

// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#ifndef CYCLEVC_EVAL_HPP
#define CYCLEVC_EVAL_HPP

#include <array>
#include <string>
#include <vector>

#include "cyclevc/corpus.hpp"
#include "cyclevc/trainer.hpp"

namespace cyclevc {

// Plain cosine similarity; throws on zero-norm inputs.
double cosine_sim(const std::vector<double>& e1, const std::vector<double>& e2);

struct SimMatrix {
  std::vector<std::pair<std::string, std::string>> row_labels;  // (speaker, language)
  std::vector<std::pair<std::string, std::string>> col_labels;
  std::vector<double> cells;  // row-major mean cosine values

  double at(int r, int c) const {
    return cells[static_cast<size_t>(r) * col_labels.size() + c];
  }
  void write_csv(const std::string& path) const;
};

// Mean cosine similarity between sampled utterance pairs of every
// (speaker, language) subset pair. pairs_per_cell <= 0 samples exhaustively
// (self-pairs excluded on diagonal cells). Optional language filters restrict
// rows/columns to one language each.
SimMatrix sim_matrix(const Corpus& corpus, const SvModel& sv, int pairs_per_cell,
                     uint64_t seed, const std::string& row_language = "",
                     const std::string& col_language = "");

// Levenshtein(hyp, ref) / len(ref); empty ref is an error.
double phoneme_error_rate(const std::vector<std::string>& hyp,
                          const std::vector<std::string>& ref);

struct PairSpec {
  int num_pairs = 100;
  bool cross_language = true;  // target speaker from a different language
};

struct EvalPair {
  std::string source_utt;
  std::string target_utt;
  double sim_target = 0.0;  // cosine(SV(converted), SV(target ref))
  double sim_source = 0.0;  // cosine(SV(converted), SV(source))
  double per = 0.0;
};

struct EvalReport {
  std::vector<EvalPair> pairs;
  double mean_sim_target = 0.0;
  double mean_sim_source = 0.0;
  double mean_per = 0.0;
  double closer_to_target_fraction = 0.0;
  std::string config_echo;

  void recompute_aggregates();
  void write_json(const std::string& path) const;
};

EvalReport evaluate_conversion(const Generator& gen, const AuxModels& aux,
                               const Corpus& corpus, const PairSpec& spec,
                               uint64_t seed);

// Same protocol with a caller-supplied conversion function (stub calibration
// and ablated models share the sampling and scoring path).
using ConvertFn = std::function<Tensor(const Utterance& source, const Utterance& ref)>;
EvalReport evaluate_conversion_with(const ConvertFn& convert, const AuxModels& aux,
                                    const Corpus& corpus, const PairSpec& spec,
                                    uint64_t seed);

// ---- embedding export ----

struct LabeledEmbeddings {
  std::vector<std::vector<double>> vectors;
  std::vector<std::string> labels;
};

// Writes <base>.emb (u32 count, u32 dim, f32 rows), <base>.labels (one label
// per line) and, when requested, <base>.pca.csv with a deterministic 2-D
// principal-component projection.
void export_embeddings(const LabeledEmbeddings& data, const std::string& base_path,
                       bool with_pca);
LabeledEmbeddings load_embeddings(const std::string& base_path);
std::vector<std::array<double, 2>> pca_2d(const std::vector<std::vector<double>>& x);

// ---- ablation harness ----

struct AblationRow {
  std::string setting;  // full | wo_step3 | wo_step23 | wo_asr | wo_conformer
  double mean_sim_target = 0.0;
  double mean_per = 0.0;
  double closer_to_target_fraction = 0.0;
};

struct AblationReport {
  std::vector<AblationRow> rows;
  void write_json(const std::string& path) const;
  void write_csv(const std::string& path) const;
};

// Trains the full model plus each requested variant under identical
// settings, evaluates cross-language conversion on the held-out corpus and
// tabulates SIM/PER side by side.
AblationReport run_ablation(const std::vector<std::string>& settings,
                            const NetConfig& net_cfg, const TrainConfig& train_cfg,
                            const Corpus& train_corpus, const Corpus& eval_corpus,
                            const AuxModels& aux, int eval_pairs, uint64_t seed);

}  // namespace cyclevc

#endif  // CYCLEVC_EVAL_HPP
