#include "sketchime/trainer.hpp"

#include <algorithm>
#include <filesystem>
#include <numeric>
#include <random>
#include <set>

#include "sketchime/checkpoint.hpp"
#include "sketchime/errors.hpp"
#include "sketchime/optim.hpp"

namespace sketchime {

void TrainConfig::validate() const {
  model.validate();
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  if (batch < 1) throw ConfigError("batch must be >= 1");
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (!(lambda1 > 0.0)) throw ConfigError("lambda1 must be positive");
  if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be >= 0");
  if (flags.cfa != model.use_cfa) throw ConfigError("cfa flag disagrees with model.use_cfa");
}

TrainConfig TrainConfig::full(int num_categories, int num_components) {
  TrainConfig c;
  c.model = ModelConfig::full(num_categories, num_components);
  return c;
}

TrainConfig TrainConfig::desk(int num_categories, int num_components) {
  TrainConfig c;
  c.model = ModelConfig::desk(num_categories, num_components);
  c.batch = 32;
  c.epochs = 20;
  return c;
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"model", c.model},
                     {"lr", c.lr},
                     {"batch", c.batch},
                     {"epochs", c.epochs},
                     {"seed", c.seed},
                     {"flags", {{"cfa", c.flags.cfa}, {"rsm", c.flags.rsm}, {"kld", c.flags.kld}}},
                     {"lambda1", c.lambda1},
                     {"test_mode", c.test_mode},
                     {"train_path", c.train_path},
                     {"test_path", c.test_path},
                     {"knowledge_path", c.knowledge_path},
                     {"checkpoint_dir", c.checkpoint_dir},
                     {"checkpoint_every", c.checkpoint_every}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  if (j.contains("model")) {
    nlohmann::json m = c.model;
    m.merge_patch(j.at("model"));
    c.model = m.get<ModelConfig>();
  }
  c.lr = j.value("lr", c.lr);
  c.batch = j.value("batch", c.batch);
  c.epochs = j.value("epochs", c.epochs);
  c.seed = j.value("seed", c.seed);
  if (j.contains("flags")) {
    const auto& f = j.at("flags");
    c.flags.cfa = f.value("cfa", c.flags.cfa);
    c.flags.rsm = f.value("rsm", c.flags.rsm);
    c.flags.kld = f.value("kld", c.flags.kld);
    c.model.use_cfa = c.flags.cfa;
  }
  c.lambda1 = j.value("lambda1", c.lambda1);
  c.test_mode = j.value("test_mode", c.test_mode);
  c.train_path = j.value("train_path", c.train_path);
  c.test_path = j.value("test_path", c.test_path);
  c.knowledge_path = j.value("knowledge_path", c.knowledge_path);
  c.checkpoint_dir = j.value("checkpoint_dir", c.checkpoint_dir);
  c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
}

namespace {

int argmax(const Matrix& m, Eigen::Index row) {
  Eigen::Index best = 0;
  m.row(row).maxCoeff(&best);
  return static_cast<int>(best);
}

}  // namespace

Predictor model_predictor(const ModelState& state, const KnowledgeMatrix& km, bool rsm) {
  return [&state, &km, rsm](const Sample& s) {
    const ForwardOutput out = forward(s.rs, s.img, state, km, rsm);
    Prediction p;
    p.category = argmax(out.p_r, 0);
    p.points.resize(out.p_s_final.rows());
    for (Eigen::Index i = 0; i < out.p_s_final.rows(); ++i) p.points[i] = argmax(out.p_s_final, i);
    return p;
  };
}

MetricReport evaluate(const Predictor& predict, const std::vector<Sample>& data) {
  MetricAccumulator acc;
  for (const auto& s : data) {
    const Prediction p = predict(s);
    acc.add_sketch(p.category, s.category, p.points, s.semantic, s.rs.stroke_of_point);
  }
  return MetricReport::from(acc);
}

MetricReport evaluate(const ModelState& state, const std::vector<Sample>& data, const KnowledgeMatrix& km,
                      bool rsm) {
  return evaluate(model_predictor(state, km, rsm), data);
}

SplitPMetric p_metric_by_recognition(const Predictor& predict, const std::vector<Sample>& data) {
  std::size_t pts[2] = {0, 0}, ok[2] = {0, 0};
  SplitPMetric r;
  for (const auto& s : data) {
    const Prediction p = predict(s);
    const int k = p.category == s.category ? 0 : 1;
    (k == 0 ? r.n_correct : r.n_wrong)++;
    for (std::size_t i = 0; i < p.points.size(); ++i) ok[k] += p.points[i] == s.semantic[i];
    pts[k] += p.points.size();
  }
  r.correct = pts[0] ? static_cast<double>(ok[0]) / static_cast<double>(pts[0]) : 0.0;
  r.wrong = pts[1] ? static_cast<double>(ok[1]) / static_cast<double>(pts[1]) : 0.0;
  return r;
}

nlohmann::json TrainResult::report_json() const {
  nlohmann::json j = report;
  j["train_manifest"] = train_manifest;
  j["test_manifest"] = test_manifest;
  nlohmann::json ep = nlohmann::json::array();
  for (const auto& e : epochs)
    ep.push_back({{"epoch", e.epoch},
                  {"loss", e.loss},
                  {"segmentation", e.segmentation},
                  {"recognition", e.recognition},
                  {"kl", e.kl}});
  j["epochs"] = ep;
  return j;
}

TrainResult train(const TrainConfig& cfg, const std::vector<Sample>& train_set, const std::vector<Sample>& test_set,
                  const KnowledgeMatrix& km, const EpochHook& hook) {
  cfg.validate();
  return train_from(cfg, init_model(cfg.model, cfg.seed), train_set, test_set, km, hook);
}

TrainResult train_from(const TrainConfig& cfg, ModelState state, const std::vector<Sample>& train_set,
                       const std::vector<Sample>& test_set, const KnowledgeMatrix& km, const EpochHook& hook,
                       const SampleLoss& loss) {
  cfg.validate();
  const LossConfig loss_cfg = cfg.loss();
  loss_cfg.validate();
  if (km.num_categories() != cfg.model.num_categories || km.num_components() != cfg.model.num_components)
    throw ConfigError("knowledge matrix does not match the model's class counts");
  validate_labels(train_set, km);
  validate_labels(test_set, km);
  if (cfg.epochs > 0 && train_set.empty()) throw ConfigError("training set is empty");

  std::set<std::uint64_t> train_hashes;
  for (const auto& s : train_set) train_hashes.insert(s.hash);
  for (const auto& s : test_set)
    if (train_hashes.count(s.hash))
      throw ConfigError("test record " + s.source_id + " also appears in the training split");

  TrainResult result;
  result.train_manifest = manifest_digest(train_set);
  result.test_manifest = manifest_digest(test_set);

  Adam opt(state.vars(), AdamConfig{cfg.lr});
  std::mt19937_64 rng(cfg.seed ^ 0x5bd1e995ull);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    EpochLog log;
    log.epoch = epoch;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch));
      const double w = 1.0 / static_cast<double>(end - start);
      opt.zero_grad();
      for (std::size_t b = start; b < end; ++b) {
        const Sample& s = train_set[order[b]];
        LossTerms terms;
        if (loss) {
          terms = loss(state, s);
        } else {
          const ForwardGraph g = forward_graph(state, s.rs, s.img);
          terms = total_loss(g, s.category, s.semantic, s.rs.stroke_of_point, km, loss_cfg);
        }
        const double value = terms.total.scalar();
        if (!std::isfinite(value))
          throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + " on record " + s.source_id);
        log.loss += value;
        log.segmentation += terms.segmentation;
        log.recognition += terms.recognition;
        log.kl += terms.kl;
        ag::backward(ag::scale(terms.total, w));
      }
      opt.step();
    }
    if (!state.all_finite()) throw NumericError("parameters became non-finite at epoch " + std::to_string(epoch));
    const double n = static_cast<double>(train_set.size());
    log.loss /= n;
    log.segmentation /= n;
    log.recognition /= n;
    log.kl /= n;
    result.epochs.push_back(log);
    if (hook) hook(log);
    if (!cfg.checkpoint_dir.empty() && cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0) {
      std::filesystem::create_directories(cfg.checkpoint_dir);
      save_checkpoint((std::filesystem::path(cfg.checkpoint_dir) / ("epoch" + std::to_string(epoch) + ".ckpt")).string(),
                      state, km);
    }
  }

  result.report = evaluate(state, test_set, km, cfg.flags.rsm);
  result.state = std::move(state);
  return result;
}

}  // namespace sketchime
