#include "sketchime/domain_adapt.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "sketchime/errors.hpp"
#include "sketchime/losses.hpp"
#include "sketchime/optim.hpp"

namespace sketchime {

using ag::Var;

Matrix multilinear_map(const Matrix& f, const Matrix& g) {
  if (f.rows() != g.rows()) throw ConfigError("multilinear_map: row counts differ");
  if (!f.allFinite() || !g.allFinite()) throw NumericError("multilinear_map: non-finite input");
  return ag::outer_rows(ag::constant(f), ag::constant(g)).value();
}

Discriminator Discriminator::init(int in, int hidden, std::mt19937_64& rng) {
  if (in < 1 || hidden < 1) throw ConfigError("discriminator sizes must be positive");
  auto uniform = [&](int r, int c, double bound) {
    std::uniform_real_distribution<double> u(-bound, bound);
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
    return m;
  };
  Discriminator d;
  d.w1 = ag::parameter(uniform(in, hidden, std::sqrt(6.0 / in)));
  d.b1 = ag::parameter(Matrix::Zero(1, hidden));
  d.w2 = ag::parameter(uniform(hidden, 1, std::sqrt(1.0 / hidden)));
  d.b2 = ag::parameter(Matrix::Zero(1, 1));
  return d;
}

Var Discriminator::logits(const Var& x) const {
  return ag::add_row(ag::matmul(ag::relu(ag::add_row(ag::matmul(x, w1), b1)), w2), b2);
}

std::vector<Var> Discriminator::vars() const { return {w1, b1, w2, b2}; }

void DAConfig::validate() const {
  if (!(lambda_adv >= 0.0) || !std::isfinite(lambda_adv)) throw ConfigError("lambda_adv must be >= 0");
  if (shots_target < 0 || shots_source < 0) throw ConfigError("shot counts must be >= 0");
  if (steps < 1) throw ConfigError("steps must be >= 1");
  if (batch < 1) throw ConfigError("batch must be >= 1");
  if (!(lr > 0.0) || !(disc_lr > 0.0)) throw ConfigError("learning rates must be positive");
  if (!(warmup >= 0.0 && warmup <= 1.0)) throw ConfigError("warmup must lie in [0, 1]");
  if (seg_points < 1 || disc_hidden < 1) throw ConfigError("seg_points and disc_hidden must be positive");
  if (!(lambda1 > 0.0)) throw ConfigError("lambda1 must be positive");
}

double DAConfig::lambda_at(int step) const {
  const double ramp = warmup * steps;
  if (ramp <= 0.0) return lambda_adv;
  return lambda_adv * std::min(1.0, static_cast<double>(step) / ramp);
}

void to_json(nlohmann::json& j, const DAConfig& c) {
  j = nlohmann::json{{"lambda_adv", c.lambda_adv}, {"shots_target", c.shots_target},
                     {"shots_source", c.shots_source}, {"steps", c.steps},
                     {"batch", c.batch},           {"lr", c.lr},
                     {"disc_lr", c.disc_lr},       {"warmup", c.warmup},
                     {"seg_points", c.seg_points}, {"disc_hidden", c.disc_hidden},
                     {"lambda1", c.lambda1},       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, DAConfig& c) {
  c.lambda_adv = j.value("lambda_adv", c.lambda_adv);
  c.shots_target = j.value("shots_target", c.shots_target);
  c.shots_source = j.value("shots_source", c.shots_source);
  c.steps = j.value("steps", c.steps);
  c.batch = j.value("batch", c.batch);
  c.lr = j.value("lr", c.lr);
  c.disc_lr = j.value("disc_lr", c.disc_lr);
  c.warmup = j.value("warmup", c.warmup);
  c.seg_points = j.value("seg_points", c.seg_points);
  c.disc_hidden = j.value("disc_hidden", c.disc_hidden);
  c.lambda1 = j.value("lambda1", c.lambda1);
  c.seed = j.value("seed", c.seed);
}

std::vector<Sample> select_shots(const std::vector<Sample>& data, int per_class, std::uint64_t seed,
                                 std::vector<Sample>* rest) {
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  if (per_class > 0) {
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
  }
  std::map<int, int> taken;
  std::vector<bool> keep(data.size(), false);
  for (std::size_t i : order)
    if (per_class == 0 || taken[data[i].category]++ < per_class) keep[i] = true;
  std::vector<Sample> out;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (keep[i]) {
      out.push_back(data[i]);
    } else if (rest) {
      rest->push_back(data[i]);
    }
  }
  return out;
}

namespace {

Var rec_pair(const ForwardGraph& g) { return ag::outer_rows(g.f_c, ag::detach(g.p_r)); }

Var seg_pair(const ForwardGraph& g, const std::vector<int>& idx) {
  return ag::outer_rows(ag::gather_rows(g.f_csg, idx), ag::detach(ag::gather_rows(g.p_s, idx)));
}

std::vector<int> subsample(Eigen::Index n, int k, std::mt19937_64& rng) {
  std::vector<int> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  if (k < n) {
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(static_cast<std::size_t>(k));
    std::sort(idx.begin(), idx.end());
  }
  return idx;
}

Var supervised_loss(const ForwardGraph& g, const Sample& s, const KnowledgeMatrix& km, double lambda1) {
  if (s.semantic.empty()) {
    const int y[] = {s.category};
    return ag::scale(ag::cross_entropy(g.rec_logits, y), lambda1);
  }
  return total_loss(g, s.category, s.semantic, s.rs.stroke_of_point, km, LossConfig{lambda1, 0}).total;
}

}  // namespace

double discriminator_accuracy(const ModelState& state, const Discriminator& d, const std::vector<Sample>& source,
                              const std::vector<Sample>& target) {
  std::size_t right = 0, total = 0;
  auto run = [&](const std::vector<Sample>& set, bool is_source) {
    for (const auto& s : set) {
      const ForwardGraph g = forward_graph(state, s.rs, s.img);
      const double logit = d.logits(rec_pair(g)).scalar();
      right += (logit > 0.0) == is_source;
      ++total;
    }
  };
  run(source, true);
  run(target, false);
  return total ? static_cast<double>(right) / static_cast<double>(total) : 0.5;
}

DAResult adapt(const ModelState& state, const std::vector<Sample>& source, const std::vector<Sample>& target,
               const KnowledgeMatrix& km, const DAConfig& cfg) {
  cfg.validate();
  if (target.empty()) throw ConfigError("adapt: target set is empty");
  if (source.empty()) throw ConfigError("adapt: source set is empty");
  if (km.num_categories() != state.config.num_categories || km.num_components() != state.config.num_components)
    throw ConfigError("adapt: knowledge matrix does not match the model");
  validate_labels(source, km);
  validate_labels(target, km, false);

  std::vector<Sample> source_rest, target_rest;
  const std::vector<Sample> src = select_shots(source, cfg.shots_source, cfg.seed ^ 0x51u, &source_rest);
  const std::vector<Sample> tgt = select_shots(target, cfg.shots_target, cfg.seed ^ 0x7au, &target_rest);

  DAResult result;
  result.state = state.clone();
  result.source_used = src.size();
  result.target_used = tgt.size();
  ModelState& g_state = result.state;

  const auto& mc = g_state.config;
  std::mt19937_64 rng(cfg.seed ^ 0xda5eedull), d_rng(cfg.seed ^ 0xd15cull);
  Discriminator d_rec = Discriminator::init(mc.sketch_feature_dim * mc.num_categories, cfg.disc_hidden, d_rng);
  Discriminator d_seg = Discriminator::init(mc.fused_dim() * mc.num_components, cfg.disc_hidden, d_rng);

  const bool holdout = !source_rest.empty() && !target_rest.empty();
  if (holdout) result.disc_accuracy_start = discriminator_accuracy(g_state, d_rec, source_rest, target_rest);

  Adam opt_g(g_state.vars(), AdamConfig{cfg.lr});
  std::vector<Var> d_vars = d_rec.vars();
  for (const auto& v : d_seg.vars()) d_vars.push_back(v);
  Adam opt_d(d_vars, AdamConfig{cfg.disc_lr});

  auto draw = [&](const std::vector<Sample>& set) {
    std::vector<std::size_t> idx(set.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(std::min<std::size_t>(idx.size(), static_cast<std::size_t>(cfg.batch)));
    return idx;
  };

  for (int step = 0; step < cfg.steps; ++step) {
    const double lambda = cfg.lambda_at(step);
    const std::vector<std::size_t> bs = draw(src), bt = draw(tgt);
    const double w = 1.0 / static_cast<double>(bs.size() + bt.size());
    DAStepLog log;
    log.step = step;
    log.lambda = lambda;
    opt_g.zero_grad();
    opt_d.zero_grad();
    auto visit = [&](const Sample& s, double domain) {
      const ForwardGraph g = forward_graph(g_state, s.rs, s.img);
      const Var sup = supervised_loss(g, s, km, cfg.lambda1);
      const std::vector<double> y_rec{domain};
      const Var l_rec = ag::bce_with_logits(d_rec.logits(ag::grad_reverse(rec_pair(g), lambda)), y_rec);
      const std::vector<int> idx = subsample(g.f_csg.rows(), cfg.seg_points, rng);
      const std::vector<double> y_seg(idx.size(), domain);
      const Var l_seg = ag::bce_with_logits(d_seg.logits(ag::grad_reverse(seg_pair(g, idx), lambda)), y_seg);
      const Var total = ag::add(sup, ag::add(l_rec, l_seg));
      if (!std::isfinite(total.scalar()))
        throw NumericError("adapt: non-finite loss at step " + std::to_string(step) + " on record " + s.source_id);
      log.supervised += sup.scalar() * w;
      log.disc_rec += l_rec.scalar() * w;
      log.disc_seg += l_seg.scalar() * w;
      ag::backward(ag::scale(total, w));
    };
    for (std::size_t i : bs) visit(src[i], 1.0);
    for (std::size_t i : bt) visit(tgt[i], 0.0);
    opt_g.step();
    opt_d.step();
    if (!g_state.all_finite()) throw NumericError("adapt: parameters became non-finite at step " + std::to_string(step));
    result.log.push_back(log);
  }

  if (holdout) result.disc_accuracy_end = discriminator_accuracy(g_state, d_rec, source_rest, target_rest);
  return result;
}

}  // namespace sketchime
