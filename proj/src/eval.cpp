// cyclevc/eval.cpp

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

#include "cyclevc/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <stdexcept>

#include "json.hpp"

namespace cyclevc {

using nlohmann::json;

namespace {

void check(bool cond, const std::string& msg) {
  if (!cond) throw std::runtime_error(msg);
}

}  // namespace

double cosine_sim(const std::vector<double>& e1, const std::vector<double>& e2) {
  check(e1.size() == e2.size() && !e1.empty(), "cosine_sim: size mismatch");
  double dot = 0.0, n1 = 0.0, n2 = 0.0;
  for (size_t i = 0; i < e1.size(); ++i) {
    dot += e1[i] * e2[i];
    n1 += e1[i] * e1[i];
    n2 += e2[i] * e2[i];
  }
  check(n1 > 0.0 && n2 > 0.0, "cosine_sim: zero-norm vector");
  return dot / (std::sqrt(n1) * std::sqrt(n2));
}

void SimMatrix::write_csv(const std::string& path) const {
  std::ofstream os(path);
  check(os.good(), "SimMatrix: cannot open " + path);
  os << "speaker_language";
  for (const auto& [spk, lang] : col_labels) os << "," << spk << "|" << lang;
  os << "\n";
  for (size_t r = 0; r < row_labels.size(); ++r) {
    os << row_labels[r].first << "|" << row_labels[r].second;
    for (size_t c = 0; c < col_labels.size(); ++c) os << "," << at(static_cast<int>(r), static_cast<int>(c));
    os << "\n";
  }
}

SimMatrix sim_matrix(const Corpus& corpus, const SvModel& sv, int pairs_per_cell,
                     uint64_t seed, const std::string& row_language,
                     const std::string& col_language) {
  // All (speaker, language) subsets, sorted for determinism.
  std::vector<std::pair<std::string, std::string>> groups;
  for (const auto& spk : corpus.speakers())
    for (const auto& lang : corpus.languages_of_speaker(spk))
      groups.emplace_back(spk, lang);
  std::sort(groups.begin(), groups.end());

  SimMatrix m;
  for (const auto& g : groups) {
    if (row_language.empty() || g.second == row_language) m.row_labels.push_back(g);
    if (col_language.empty() || g.second == col_language) m.col_labels.push_back(g);
  }
  check(!m.row_labels.empty() && !m.col_labels.empty(),
        "sim_matrix: no (speaker, language) subsets match the filters");

  // One embedding per utterance.
  std::map<int, std::vector<double>> emb;
  auto embed = [&](int idx) -> const std::vector<double>& {
    auto it = emb.find(idx);
    if (it == emb.end()) it = emb.emplace(idx, sv.embed(corpus.utt(idx).mel)).first;
    return it->second;
  };

  std::mt19937_64 rng(seed);
  m.cells.assign(m.row_labels.size() * m.col_labels.size(), 0.0);
  for (size_t r = 0; r < m.row_labels.size(); ++r) {
    const auto& ru = corpus.group(m.row_labels[r].first, m.row_labels[r].second);
    for (size_t c = 0; c < m.col_labels.size(); ++c) {
      const auto& cu = corpus.group(m.col_labels[c].first, m.col_labels[c].second);
      const bool same = m.row_labels[r] == m.col_labels[c];
      double sum = 0.0;
      int n = 0;
      if (pairs_per_cell <= 0) {
        for (int a : ru)
          for (int b : cu) {
            if (same && a == b) continue;
            sum += cosine_sim(embed(a), embed(b));
            ++n;
          }
      } else {
        std::uniform_int_distribution<size_t> da(0, ru.size() - 1);
        std::uniform_int_distribution<size_t> db(0, cu.size() - 1);
        for (int p = 0; p < pairs_per_cell; ++p) {
          int a = ru[da(rng)];
          int b = cu[db(rng)];
          if (same && a == b) {
            if (ru.size() < 2) break;
            while (b == a) b = cu[db(rng)];
          }
          sum += cosine_sim(embed(a), embed(b));
          ++n;
        }
      }
      check(n > 0, "sim_matrix: empty cell for (" + m.row_labels[r].first + "|" +
                       m.row_labels[r].second + ") x (" + m.col_labels[c].first +
                       "|" + m.col_labels[c].second + ")");
      m.cells[r * m.col_labels.size() + c] = sum / n;
    }
  }
  return m;
}

double phoneme_error_rate(const std::vector<std::string>& hyp,
                          const std::vector<std::string>& ref) {
  check(!ref.empty(), "phoneme_error_rate: empty reference");
  const size_t n = hyp.size(), m = ref.size();
  std::vector<int> prev(m + 1), cur(m + 1);
  for (size_t j = 0; j <= m; ++j) prev[j] = static_cast<int>(j);
  for (size_t i = 1; i <= n; ++i) {
    cur[0] = static_cast<int>(i);
    for (size_t j = 1; j <= m; ++j) {
      int sub = prev[j - 1] + (hyp[i - 1] == ref[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return static_cast<double>(prev[m]) / static_cast<double>(m);
}

void EvalReport::recompute_aggregates() {
  check(!pairs.empty(), "EvalReport: no pairs");
  double st = 0.0, ss = 0.0, pe = 0.0;
  int closer = 0;
  for (const auto& p : pairs) {
    st += p.sim_target;
    ss += p.sim_source;
    pe += p.per;
    if (p.sim_target > p.sim_source) ++closer;
  }
  mean_sim_target = st / pairs.size();
  mean_sim_source = ss / pairs.size();
  mean_per = pe / pairs.size();
  closer_to_target_fraction = static_cast<double>(closer) / pairs.size();
}

void EvalReport::write_json(const std::string& path) const {
  json j;
  j["mean_sim_target"] = mean_sim_target;
  j["mean_sim_source"] = mean_sim_source;
  j["mean_per"] = mean_per;
  j["closer_to_target_fraction"] = closer_to_target_fraction;
  j["num_pairs"] = pairs.size();
  if (!config_echo.empty()) j["config"] = json::parse(config_echo);
  json rows = json::array();
  for (const auto& p : pairs)
    rows.push_back({{"source", p.source_utt},
                    {"target", p.target_utt},
                    {"sim_target", p.sim_target},
                    {"sim_source", p.sim_source},
                    {"per", p.per}});
  j["pairs"] = rows;
  std::ofstream os(path);
  check(os.good(), "EvalReport: cannot open " + path);
  os << j.dump(2) << "\n";
}

EvalReport evaluate_conversion(const Generator& gen, const AuxModels& aux,
                               const Corpus& corpus, const PairSpec& spec,
                               uint64_t seed) {
  return evaluate_conversion_with(
      [&gen](const Utterance& src, const Utterance& ref) {
        return gen.convert(mel_to_tensor(src.mel), mel_to_tensor(ref.mel));
      },
      aux, corpus, spec, seed);
}

EvalReport evaluate_conversion_with(const ConvertFn& convert, const AuxModels& aux,
                                    const Corpus& corpus, const PairSpec& spec,
                                    uint64_t seed) {
  check(spec.num_pairs >= 1, "evaluate_conversion: num_pairs must be >= 1");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<size_t> src_d(0, corpus.size() - 1);

  EvalReport report;
  for (int p = 0; p < spec.num_pairs; ++p) {
    const Utterance& src = corpus.utt(static_cast<int>(src_d(rng)));
    // Target speaker pool per the language mode.
    std::vector<std::pair<std::string, std::string>> targets;
    for (const auto& spk : corpus.speakers()) {
      if (spk == src.speaker_id) continue;
      for (const auto& lang : corpus.languages_of_speaker(spk)) {
        bool cross = lang != src.language_id;
        if (cross == spec.cross_language) targets.emplace_back(spk, lang);
      }
    }
    check(!targets.empty(), "evaluate_conversion: no eligible target speakers for " +
                                src.utterance_id);
    std::uniform_int_distribution<size_t> tgt_d(0, targets.size() - 1);
    auto [tspk, tlang] = targets[tgt_d(rng)];
    const auto& tutts = corpus.group(tspk, tlang);
    std::uniform_int_distribution<size_t> tu_d(0, tutts.size() - 1);
    const Utterance& ref = corpus.utt(tutts[tu_d(rng)]);

    Tensor converted = convert(src, ref);
    std::vector<double> e_conv = aux.sv.forward(converted).values();
    std::vector<double> e_tgt = aux.sv.embed(ref.mel);
    std::vector<double> e_src = aux.sv.embed(src.mel);

    EvalPair ep;
    ep.source_utt = src.utterance_id;
    ep.target_utt = ref.utterance_id;
    ep.sim_target = cosine_sim(e_conv, e_tgt);
    ep.sim_source = cosine_sim(e_conv, e_src);
    AsrOutputs asr_out = aux.asr.forward(converted);
    ep.per = phoneme_error_rate(ctc_decode(aux.asr, asr_out.logits),
                                src.phone_tokens());
    report.pairs.push_back(ep);
  }
  report.recompute_aggregates();
  return report;
}

// ---------------------------------------------------------------- PCA

std::vector<std::array<double, 2>> pca_2d(const std::vector<std::vector<double>>& x) {
  check(x.size() >= 2, "pca_2d: need at least 2 vectors");
  const size_t n = x.size(), d = x[0].size();
  for (const auto& v : x) check(v.size() == d, "pca_2d: ragged input");
  std::vector<double> mean(d, 0.0);
  for (const auto& v : x)
    for (size_t j = 0; j < d; ++j) mean[j] += v[j];
  for (auto& m : mean) m /= n;
  std::vector<std::vector<double>> centered(n, std::vector<double>(d));
  for (size_t i = 0; i < n; ++i)
    for (size_t j = 0; j < d; ++j) centered[i][j] = x[i][j] - mean[j];

  auto cov_matvec = [&](const std::vector<double>& v) {
    std::vector<double> out(d, 0.0);
    for (size_t i = 0; i < n; ++i) {
      double dot = 0.0;
      for (size_t j = 0; j < d; ++j) dot += centered[i][j] * v[j];
      for (size_t j = 0; j < d; ++j) out[j] += dot * centered[i][j];
    }
    for (auto& o : out) o /= n;
    return out;
  };
  auto normalize = [](std::vector<double>& v) {
    double s = 0.0;
    for (double q : v) s += q * q;
    s = std::sqrt(s);
    if (s < 1e-12) return false;
    for (double& q : v) q /= s;
    return true;
  };
  auto fix_sign = [](std::vector<double>& v) {
    size_t arg = 0;
    for (size_t j = 1; j < v.size(); ++j)
      if (std::abs(v[j]) > std::abs(v[arg])) arg = j;
    if (v[arg] < 0)
      for (double& q : v) q = -q;
  };

  std::vector<std::vector<double>> comps;
  for (int comp = 0; comp < 2; ++comp) {
    std::vector<double> v(d, 0.0);
    v[comp % d] = 1.0;  // deterministic start
    for (int it = 0; it < 200; ++it) {
      auto w = cov_matvec(v);
      for (const auto& prev : comps) {
        double dot = 0.0;
        for (size_t j = 0; j < d; ++j) dot += w[j] * prev[j];
        for (size_t j = 0; j < d; ++j) w[j] -= dot * prev[j];
      }
      if (!normalize(w)) break;
      v = w;
    }
    fix_sign(v);
    comps.push_back(v);
  }
  std::vector<std::array<double, 2>> out(n);
  for (size_t i = 0; i < n; ++i)
    for (int comp = 0; comp < 2; ++comp) {
      double dot = 0.0;
      for (size_t j = 0; j < d; ++j) dot += centered[i][j] * comps[comp][j];
      out[i][comp] = dot;
    }
  return out;
}

void export_embeddings(const LabeledEmbeddings& data, const std::string& base_path,
                       bool with_pca) {
  check(data.vectors.size() == data.labels.size(),
        "export_embeddings: label count mismatch");
  check(data.vectors.size() >= 2, "export_embeddings: need at least 2 vectors");
  const uint32_t count = static_cast<uint32_t>(data.vectors.size());
  const uint32_t dim = static_cast<uint32_t>(data.vectors[0].size());
  std::ofstream os(base_path + ".emb", std::ios::binary);
  check(os.good(), "export_embeddings: cannot open " + base_path + ".emb");
  os.write(reinterpret_cast<const char*>(&count), 4);
  os.write(reinterpret_cast<const char*>(&dim), 4);
  for (const auto& v : data.vectors) {
    check(v.size() == dim, "export_embeddings: ragged vectors");
    for (double q : v) {
      float f = static_cast<float>(q);
      os.write(reinterpret_cast<const char*>(&f), 4);
    }
  }
  std::ofstream ls(base_path + ".labels");
  check(ls.good(), "export_embeddings: cannot open labels file");
  for (const auto& l : data.labels) ls << l << "\n";
  if (with_pca) {
    auto proj = pca_2d(data.vectors);
    std::ofstream ps(base_path + ".pca.csv");
    check(ps.good(), "export_embeddings: cannot open pca file");
    ps << "label,x,y\n";
    for (size_t i = 0; i < proj.size(); ++i)
      ps << data.labels[i] << "," << proj[i][0] << "," << proj[i][1] << "\n";
  }
}

LabeledEmbeddings load_embeddings(const std::string& base_path) {
  std::ifstream is(base_path + ".emb", std::ios::binary);
  check(is.good(), "load_embeddings: cannot open " + base_path + ".emb");
  uint32_t count = 0, dim = 0;
  is.read(reinterpret_cast<char*>(&count), 4);
  is.read(reinterpret_cast<char*>(&dim), 4);
  check(static_cast<bool>(is), "load_embeddings: short header");
  LabeledEmbeddings out;
  out.vectors.resize(count, std::vector<double>(dim));
  for (auto& v : out.vectors)
    for (auto& q : v) {
      float f = 0.0f;
      is.read(reinterpret_cast<char*>(&f), 4);
      check(static_cast<bool>(is), "load_embeddings: short data");
      q = f;
    }
  std::ifstream ls(base_path + ".labels");
  check(ls.good(), "load_embeddings: cannot open labels file");
  std::string line;
  while (std::getline(ls, line))
    if (!line.empty()) out.labels.push_back(line);
  check(out.labels.size() == out.vectors.size(),
        "load_embeddings: label count mismatch");
  return out;
}

// ---------------------------------------------------------------- ablation

void AblationReport::write_json(const std::string& path) const {
  json j = json::array();
  for (const auto& r : rows)
    j.push_back({{"setting", r.setting},
                 {"mean_sim_target", r.mean_sim_target},
                 {"mean_per", r.mean_per},
                 {"closer_to_target_fraction", r.closer_to_target_fraction}});
  std::ofstream os(path);
  check(os.good(), "AblationReport: cannot open " + path);
  os << j.dump(2) << "\n";
}

void AblationReport::write_csv(const std::string& path) const {
  std::ofstream os(path);
  check(os.good(), "AblationReport: cannot open " + path);
  os << "setting,mean_sim_target,mean_per,closer_to_target_fraction\n";
  for (const auto& r : rows)
    os << r.setting << "," << r.mean_sim_target << "," << r.mean_per << ","
       << r.closer_to_target_fraction << "\n";
}

AblationReport run_ablation(const std::vector<std::string>& settings,
                            const NetConfig& net_cfg, const TrainConfig& train_cfg,
                            const Corpus& train_corpus, const Corpus& eval_corpus,
                            const AuxModels& aux, int eval_pairs, uint64_t seed) {
  std::vector<std::string> all = {"full"};
  for (const auto& s : settings) {
    check(s != "full", "run_ablation: 'full' is always included");
    all.push_back(s);
  }
  AblationReport report;
  for (const auto& setting : all) {
    NetConfig net = net_cfg;
    TrainConfig train = train_cfg;
    apply_ablation(setting, &net, &train);
    CycleTrainer trainer(net, train, &aux);
    trainer.train(train_corpus);
    PairSpec spec;
    spec.num_pairs = eval_pairs;
    spec.cross_language = true;
    EvalReport er = evaluate_conversion(trainer.generator(), aux, eval_corpus,
                                        spec, seed);
    AblationRow row;
    row.setting = setting;
    row.mean_sim_target = er.mean_sim_target;
    row.mean_per = er.mean_per;
    row.closer_to_target_fraction = er.closer_to_target_fraction;
    report.rows.push_back(row);
  }
  return report;
}

}  // namespace cyclevc
