#include "sketchime/fscil.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <memory>
#include <set>

#include "sketchime/domain_adapt.hpp"
#include "sketchime/errors.hpp"
#include "sketchime/losses.hpp"

namespace sketchime {

using ag::Var;

// ---------------------------------------------------------------------------
// Plan

void SessionPlan::validate() const {
  if (base_categories.empty()) throw ConfigError("plan: base session has no categories");
  std::set<int> cats, comps;
  auto claim = [](std::set<int>& seen, const std::vector<int>& ids, const char* what, std::size_t session) {
    for (int id : ids) {
      if (id < 0) throw ConfigError(std::string("plan: negative ") + what + " id");
      if (!seen.insert(id).second)
        throw ConfigError(std::string("plan: ") + what + " " + std::to_string(id) + " in session " +
                          std::to_string(session) + " collides with an earlier session");
    }
  };
  claim(cats, base_categories, "category", 0);
  claim(comps, base_components, "component", 0);
  for (std::size_t t = 0; t < sessions.size(); ++t) {
    claim(cats, sessions[t].categories, "category", t + 1);
    claim(comps, sessions[t].components, "component", t + 1);
    if (sessions[t].shots < 1) throw ConfigError("plan: shots must be >= 1");
  }
}

int SessionPlan::new_categories() const {
  int n = 0;
  for (const auto& s : sessions) n += static_cast<int>(s.categories.size());
  return n;
}

int SessionPlan::new_components() const {
  int n = 0;
  for (const auto& s : sessions) n += static_cast<int>(s.components.size());
  return n;
}

std::vector<int> SessionPlan::category_order(int session) const {
  std::vector<int> out = base_categories;
  for (int t = 0; t < session && t < static_cast<int>(sessions.size()); ++t)
    out.insert(out.end(), sessions[t].categories.begin(), sessions[t].categories.end());
  return out;
}

std::vector<int> SessionPlan::component_order(int session) const {
  std::vector<int> out = base_components;
  for (int t = 0; t < session && t < static_cast<int>(sessions.size()); ++t)
    out.insert(out.end(), sessions[t].components.begin(), sessions[t].components.end());
  return out;
}

void to_json(nlohmann::json& j, const SessionPlan& p) {
  nlohmann::json s = nlohmann::json::array();
  for (const auto& st : p.sessions)
    s.push_back({{"categories", st.categories}, {"components", st.components}, {"shots", st.shots}});
  j = nlohmann::json{{"base", {{"categories", p.base_categories}, {"components", p.base_components}}},
                     {"sessions", s}};
}

void from_json(const nlohmann::json& j, SessionPlan& p) {
  try {
    const auto& b = j.at("base");
    p.base_categories = b.at("categories").get<std::vector<int>>();
    p.base_components = b.value("components", std::vector<int>{});
    p.sessions.clear();
    for (const auto& s : j.value("sessions", nlohmann::json::array())) {
      SessionStep st;
      st.categories = s.at("categories").get<std::vector<int>>();
      st.components = s.value("components", std::vector<int>{});
      st.shots = s.value("shots", 5);
      p.sessions.push_back(std::move(st));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("plan: ") + e.what());
  }
  p.validate();
}

SessionPlan load_session_plan(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open plan " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("plan " + path + ": " + e.what());
  }
  return j.get<SessionPlan>();
}

// ---------------------------------------------------------------------------
// Banks and losses

namespace {

PrototypeBank bank_of(const ModelState& state, const char* known, const char* virt) {
  if (state.config.head != HeadKind::Cosine) throw ConfigError("prototype banks need the cosine head");
  PrototypeBank b;
  b.known = state.param(known).value();
  const Eigen::Index d = b.known.cols();
  b.virtual_slots = state.has_param(virt) ? state.param(virt).value() : Matrix(0, d);
  return b;
}

Var columns(const Var& m, int first, int count) {
  std::vector<int> idx(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) idx[static_cast<std::size_t>(i)] = first + i;
  return ag::transpose(ag::gather_rows(ag::transpose(m), idx));
}

std::vector<int> argmax_range(const Matrix& logits, int first, int last) {
  std::vector<int> out(static_cast<std::size_t>(logits.rows()));
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    int best = first;
    for (int c = first + 1; c < last; ++c)
      if (logits(r, c) > logits(r, best)) best = c;
    out[static_cast<std::size_t>(r)] = best;
  }
  return out;
}

void require_virtual(const Var& logits, int known) {
  if (known < 1) throw ConfigError("FACT loss needs at least one known class");
  if (logits.cols() <= known) throw ConfigError("FACT loss needs virtual prototypes");
}

}  // namespace

PrototypeBank category_bank(const ModelState& state) { return bank_of(state, "rec_proto", "rec_virtual"); }
PrototypeBank component_bank(const ModelState& state) { return bank_of(state, "seg_proto", "seg_virtual"); }

Var mask_logits(const Var& logits, std::span<const int> y) {
  if (static_cast<Eigen::Index>(y.size()) != logits.rows()) throw LabelError("mask: one label per row is required");
  Matrix keep = Matrix::Ones(logits.rows(), logits.cols());
  for (std::size_t r = 0; r < y.size(); ++r) {
    if (y[r] < 0 || y[r] >= logits.cols()) throw LabelError("mask: label out of range");
    keep(static_cast<Eigen::Index>(r), y[r]) = 0.0;
  }
  return ag::mul(logits, ag::constant(std::move(keep)));
}

std::vector<int> virtual_pseudo_labels(const Matrix& logits, int known) {
  return argmax_range(logits, known, static_cast<int>(logits.cols()));
}

std::vector<int> known_pseudo_labels(const Matrix& logits, int known) { return argmax_range(logits, 0, known); }

Var fact_instance_loss(const Var& logits, std::span<const int> y, int known, double gamma) {
  require_virtual(logits, known);
  for (int v : y)
    if (v < 0 || v >= known) throw LabelError("FACT loss: label " + std::to_string(v) + " is not a known class");
  Var loss = ag::cross_entropy(logits, y);
  if (gamma == 0.0) return loss;
  const std::vector<int> y_hat = virtual_pseudo_labels(logits.value(), known);
  return ag::add(loss, ag::scale(ag::cross_entropy(mask_logits(logits, y), y_hat), gamma));
}

Var fact_virtual_loss(const Var& logits, int known, double gamma) {
  require_virtual(logits, known);
  const std::vector<int> y_hat = virtual_pseudo_labels(logits.value(), known);
  Var loss = ag::cross_entropy(logits, y_hat);
  if (gamma == 0.0) return loss;
  const std::vector<int> y_hat_hat = known_pseudo_labels(logits.value(), known);
  return ag::add(loss, ag::scale(ag::cross_entropy(mask_logits(logits, y_hat), y_hat_hat), gamma));
}

Matrix mixup_virtual(const Matrix& h1, const Matrix& h2, double lam) {
  if (h1.rows() != h2.rows() || h1.cols() != h2.cols()) throw ConfigError("mixup: shapes differ");
  if (!(lam >= 0.0 && lam <= 1.0)) throw ConfigError("mixup: lam must lie in [0, 1]");
  return lam * h1 + (1.0 - lam) * h2;
}

// ---------------------------------------------------------------------------
// Config

void FSCILConfig::validate() const {
  base.validate();
  if (!(gamma >= 0.0) || !std::isfinite(gamma)) throw ConfigError("gamma must be >= 0");
  if (!(mixup_alpha > 0.0)) throw ConfigError("mixup_alpha must be positive");
}

void to_json(nlohmann::json& j, const FSCILConfig& c) {
  j = nlohmann::json{{"base", c.base},
                     {"gamma", c.gamma},
                     {"mixup_alpha", c.mixup_alpha},
                     {"virtual_prototypes", c.virtual_prototypes},
                     {"mean_base_prototypes", c.mean_base_prototypes}};
}

void from_json(const nlohmann::json& j, FSCILConfig& c) {
  if (j.contains("base")) from_json(j.at("base"), c.base);
  c.gamma = j.value("gamma", c.gamma);
  c.mixup_alpha = j.value("mixup_alpha", c.mixup_alpha);
  c.virtual_prototypes = j.value("virtual_prototypes", c.virtual_prototypes);
  c.mean_base_prototypes = j.value("mean_base_prototypes", c.mean_base_prototypes);
}

void to_json(nlohmann::json& j, const SessionReport& r) {
  j = nlohmann::json{{"session", r.session},
                     {"known_categories", r.known_categories},
                     {"known_components", r.known_components},
                     {"virtual_categories", r.virtual_categories},
                     {"virtual_components", r.virtual_components},
                     {"report", r.report},
                     {"base_acc", r.base_acc}};
}

// ---------------------------------------------------------------------------
// Base objective

namespace {

MidFeatures mix(const MidFeatures& a, const MidFeatures& b, double lam) {
  auto blend = [lam](const Var& x, const Var& y) { return ag::add(ag::scale(x, lam), ag::scale(y, 1.0 - lam)); };
  MidFeatures z;
  z.cnn = blend(a.cnn, b.cnn);
  z.cnn_shape = a.cnn_shape;
  for (std::size_t i = 0; i < a.gnn.size(); ++i) z.gnn.push_back(blend(a.gnn[i], b.gnn[i]));
  return z;
}

double sample_beta(double alpha, std::mt19937_64& rng) {
  std::gamma_distribution<double> g(alpha, 1.0);
  const double x = g(rng), y = g(rng);
  return x + y > 0.0 ? x / (x + y) : 0.5;
}

}  // namespace

SampleLoss fact_sample_loss(const std::vector<Sample>& train_set, const KnowledgeMatrix& km, const LossConfig& loss,
                            double gamma, double mixup_alpha, std::uint64_t seed) {
  auto rng = std::make_shared<std::mt19937_64>(seed ^ 0xfac7ull);
  return [&train_set, &km, loss, gamma, mixup_alpha, rng](const ModelState& state, const Sample& s) {
    const auto& c = state.config;
    const int vr = state.has_param("rec_virtual") ? c.virtual_categories : 0;
    const int vs = state.has_param("seg_virtual") ? c.virtual_components : 0;
    if (vr == 0 && vs == 0) {
      const ForwardGraph g = forward_graph(state, s.rs, s.img);
      return total_loss(g, s.category, s.semantic, s.rs.stroke_of_point, km, loss);
    }
    const int cr = c.num_categories, cs = c.num_components;
    const MidFeatures mid = forward_front(state, s.rs, s.img);
    const ForwardGraph g = forward_back(state, s.rs, mid, true);
    const int cat[] = {s.category};
    Var lr = vr ? fact_instance_loss(g.rec_logits, cat, cr, gamma) : ag::cross_entropy(g.rec_logits, cat);
    Var ls = vs ? fact_instance_loss(g.seg_logits, s.semantic, cs, gamma) : ag::cross_entropy(g.seg_logits, s.semantic);

    LossTerms t;
    t.segmentation = ls.scalar();
    t.recognition = lr.scalar();
    t.total = ag::add(ls, ag::scale(lr, loss.lambda1));
    const Var p_r = ag::softmax_rows(columns(g.rec_logits, 0, cr));
    const Var p_s = ag::softmax_rows(columns(g.seg_logits, 0, cs));
    const Var kl = kld_loss(p_r, p_s, s.rs.stroke_of_point, km);
    t.kl = kl.scalar();
    if (loss.lambda2 == 1) t.total = ag::add(t.total, kl);

    // Virtual instance from a sample of another category.
    std::uniform_int_distribution<std::size_t> pick(0, train_set.size() - 1);
    const Sample* other = nullptr;
    for (int tries = 0; tries < 16 && !other; ++tries) {
      const Sample& cand = train_set[pick(*rng)];
      if (cand.category != s.category && cand.rs.size() == s.rs.size()) other = &cand;
    }
    if (other) {
      const double lam = sample_beta(mixup_alpha, *rng);
      const MidFeatures z = mix(mid, forward_front(state, other->rs, other->img), lam);
      const ForwardGraph gz = forward_back(state, s.rs, z, true);
      if (vr) t.total = ag::add(t.total, ag::scale(fact_virtual_loss(gz.rec_logits, cr, gamma), loss.lambda1));
      if (vs) t.total = ag::add(t.total, fact_virtual_loss(gz.seg_logits, cs, gamma));
    }
    return t;
  };
}

// ---------------------------------------------------------------------------
// Sessions

namespace {

Matrix normalized_mean(const std::vector<Eigen::RowVectorXd>& rows) {
  Eigen::RowVectorXd m = Eigen::RowVectorXd::Zero(rows.front().size());
  for (const auto& r : rows) m += r;
  m /= static_cast<double>(rows.size());
  const double n = m.norm();
  if (!(n > 0.0)) throw NumericError("class mean embedding is zero");
  return m / n;
}

// Appends `fresh` to the known prototypes and removes, for each new row, the
// most similar remaining virtual slot.
void grow_bank(ModelState& state, const char* known, const char* virt, const std::vector<Matrix>& fresh,
               int& known_count, int& virtual_count) {
  if (fresh.empty()) return;
  Matrix k = state.param(known).value();
  const Eigen::Index old = k.rows();
  k.conservativeResize(old + static_cast<Eigen::Index>(fresh.size()), Eigen::NoChange);
  for (std::size_t i = 0; i < fresh.size(); ++i) k.row(old + static_cast<Eigen::Index>(i)) = fresh[i];
  state.set_param(known, std::move(k));
  known_count += static_cast<int>(fresh.size());

  if (!state.has_param(virt)) return;
  Matrix v = state.param(virt).value();
  std::vector<bool> gone(static_cast<std::size_t>(v.rows()), false);
  for (const auto& p : fresh) {
    Eigen::Index best = -1;
    double best_sim = -2.0;
    for (Eigen::Index r = 0; r < v.rows(); ++r) {
      if (gone[static_cast<std::size_t>(r)]) continue;
      const double sim = v.row(r).dot(p.row(0)) / std::max(v.row(r).norm(), 1e-12);
      if (sim > best_sim) {
        best_sim = sim;
        best = r;
      }
    }
    if (best >= 0) gone[static_cast<std::size_t>(best)] = true;
  }
  Matrix kept(0, v.cols());
  for (Eigen::Index r = 0; r < v.rows(); ++r) {
    if (gone[static_cast<std::size_t>(r)]) continue;
    kept.conservativeResize(kept.rows() + 1, Eigen::NoChange);
    kept.row(kept.rows() - 1) = v.row(r);
  }
  virtual_count = static_cast<int>(kept.rows());
  if (kept.rows() == 0) {
    state.erase_param(virt);
  } else {
    state.set_param(virt, std::move(kept));
  }
}

}  // namespace

ModelState replace_base_prototypes(const ModelState& state, const std::vector<Sample>& train_set) {
  if (state.config.head != HeadKind::Cosine) throw ConfigError("replace_base_prototypes needs the cosine head");
  const int cr = state.config.num_categories, cs = state.config.num_components;
  std::vector<std::vector<Eigen::RowVectorXd>> cat_rows(static_cast<std::size_t>(cr));
  std::vector<std::vector<Eigen::RowVectorXd>> comp_rows(static_cast<std::size_t>(cs));
  for (const auto& s : train_set) {
    if (s.category < 0 || s.category >= cr) continue;
    const ForwardGraph g = forward_graph(state, s.rs, s.img);
    cat_rows[static_cast<std::size_t>(s.category)].push_back(g.f_c.value().row(0));
    const Matrix& emb = g.seg_embed.value();
    for (std::size_t i = 0; i < s.semantic.size(); ++i) {
      const int c = s.semantic[i];
      if (c >= 0 && c < cs) comp_rows[static_cast<std::size_t>(c)].push_back(emb.row(static_cast<Eigen::Index>(i)));
    }
  }
  ModelState out = state.clone();
  // Classes without training data keep their learned prototype.
  auto replace = [&](const char* name, const std::vector<std::vector<Eigen::RowVectorXd>>& rows) {
    Matrix w = out.param(name).value();
    for (std::size_t i = 0; i < rows.size(); ++i)
      if (!rows[i].empty()) w.row(static_cast<Eigen::Index>(i)) = normalized_mean(rows[i]);
    out.set_param(name, std::move(w));
  };
  replace("rec_proto", cat_rows);
  replace("seg_proto", comp_rows);
  return out;
}

ModelState extend_session(const ModelState& state, const std::vector<Sample>& shots, int new_categories,
                          int new_components) {
  if (state.config.head != HeadKind::Cosine) throw ConfigError("extend_session needs the cosine head");
  if (new_categories < 0 || new_components < 0) throw ConfigError("extend_session: negative class count");
  const int cr = state.config.num_categories, cs = state.config.num_components;
  ModelState out = state.clone();
  if (new_categories == 0 && new_components == 0) return out;

  std::vector<std::vector<Eigen::RowVectorXd>> cat_rows(static_cast<std::size_t>(new_categories));
  std::vector<std::vector<Eigen::RowVectorXd>> comp_rows(static_cast<std::size_t>(new_components));
  for (const auto& s : shots) {
    if (s.category < cr || s.category >= cr + new_categories)
      throw LabelError("extend_session: shot of category " + std::to_string(s.category) +
                       " is not a class of this session");
    const ForwardGraph g = forward_graph(state, s.rs, s.img);
    cat_rows[static_cast<std::size_t>(s.category - cr)].push_back(g.f_c.value().row(0));
    const Matrix& emb = g.seg_embed.value();
    for (std::size_t i = 0; i < s.semantic.size(); ++i) {
      const int c = s.semantic[i];
      if (c >= cs + new_components || c < 0) throw LabelError("extend_session: component label out of range");
      if (c >= cs) comp_rows[static_cast<std::size_t>(c - cs)].push_back(emb.row(static_cast<Eigen::Index>(i)));
    }
  }
  std::vector<Matrix> cat_protos, comp_protos;
  for (int i = 0; i < new_categories; ++i) {
    if (cat_rows[static_cast<std::size_t>(i)].empty())
      throw LabelError("extend_session: no shots for new category " + std::to_string(cr + i));
    cat_protos.push_back(normalized_mean(cat_rows[static_cast<std::size_t>(i)]));
  }
  for (int i = 0; i < new_components; ++i) {
    if (comp_rows[static_cast<std::size_t>(i)].empty())
      throw LabelError("extend_session: no points for new component " + std::to_string(cs + i));
    comp_protos.push_back(normalized_mean(comp_rows[static_cast<std::size_t>(i)]));
  }
  auto& c = out.config;
  grow_bank(out, "rec_proto", "rec_virtual", cat_protos, c.num_categories, c.virtual_categories);
  grow_bank(out, "seg_proto", "seg_virtual", comp_protos, c.num_components, c.virtual_components);
  return out;
}

std::vector<Sample> remap_to_plan(const std::vector<Sample>& data, const SessionPlan& plan, int session) {
  std::map<int, int> cat, comp;
  const auto co = plan.category_order(session), so = plan.component_order(session);
  for (std::size_t i = 0; i < co.size(); ++i) cat[co[i]] = static_cast<int>(i);
  for (std::size_t i = 0; i < so.size(); ++i) comp[so[i]] = static_cast<int>(i);
  std::vector<Sample> out;
  for (const auto& s : data) {
    auto it = cat.find(s.category);
    if (it == cat.end()) continue;
    Sample m = s;
    m.category = it->second;
    for (int& c : m.semantic) {
      auto jt = comp.find(c);
      if (jt == comp.end())
        throw LabelError("record " + s.source_id + ": component " + std::to_string(c) +
                         " is not available by session " + std::to_string(session));
      c = jt->second;
    }
    out.push_back(std::move(m));
  }
  return out;
}

SessionsResult run_sessions(const SessionPlan& plan, const FSCILConfig& cfg, const std::vector<Sample>& train_set,
                            const std::vector<Sample>& test_set, const KnowledgeMatrix& km,
                            std::optional<ModelState> base_state, const EpochHook& hook) {
  plan.validate();
  cfg.validate();
  const int sessions = static_cast<int>(plan.sessions.size());
  for (int t = 0; t <= sessions; ++t) {
    const auto cats = plan.category_order(t), comps = plan.component_order(t);
    for (int id : cats)
      if (id >= km.num_categories()) throw ConfigError("plan: category " + std::to_string(id) + " is not in the knowledge matrix");
    for (int id : comps)
      if (id >= km.num_components()) throw ConfigError("plan: component " + std::to_string(id) + " is not in the knowledge matrix");
    const std::set<int> have(comps.begin(), comps.end());
    const std::size_t first = t == 0 ? 0 : plan.category_order(t - 1).size();
    for (std::size_t i = first; i < cats.size(); ++i)
      for (int c : km.components_of(cats[i]))
        if (!have.count(c))
          throw ConfigError("plan: category " + std::to_string(cats[i]) + " uses component " + std::to_string(c) +
                            " before its session");
  }

  SessionsResult result;
  const KnowledgeMatrix km0 = km.restrict_to(plan.base_categories, plan.base_components);
  const std::vector<Sample> base_train = remap_to_plan(train_set, plan, 0);
  const int base_count = static_cast<int>(plan.base_categories.size());

  if (base_state) {
    result.state = base_state->clone();
    if (result.state.config.num_categories != base_count ||
        result.state.config.num_components != static_cast<int>(plan.base_components.size()))
      throw ConfigError("base model does not match the plan's base session");
  } else {
    TrainConfig tc = cfg.base;
    tc.model.num_categories = base_count;
    tc.model.num_components = static_cast<int>(plan.base_components.size());
    tc.model.head = HeadKind::Cosine;
    tc.model.virtual_categories = cfg.virtual_prototypes ? plan.new_categories() : 0;
    tc.model.virtual_components = cfg.virtual_prototypes ? plan.new_components() : 0;
    tc.validate();
    const std::vector<Sample> base_test = remap_to_plan(test_set, plan, 0);
    const SampleLoss loss = fact_sample_loss(base_train, km0, tc.loss(), cfg.gamma, cfg.mixup_alpha, tc.seed);
    result.state = train_from(tc, init_model(tc.model, tc.seed), base_train, base_test, km0, hook, loss).state;
  }
  if (result.state.config.head != HeadKind::Cosine) throw ConfigError("class-incremental sessions need the cosine head");
  if (cfg.mean_base_prototypes) result.state = replace_base_prototypes(result.state, base_train);

  for (int t = 0; t <= sessions; ++t) {
    const std::vector<Sample> seen_train = remap_to_plan(train_set, plan, t);
    if (t > 0) {
      const auto& step = plan.sessions[static_cast<std::size_t>(t - 1)];
      const int known = result.state.config.num_categories;
      std::vector<Sample> fresh;
      for (const auto& s : seen_train)
        if (s.category >= known) fresh.push_back(s);
      const std::vector<Sample> shots = select_shots(fresh, step.shots, cfg.base.seed + static_cast<std::uint64_t>(t));
      result.state = extend_session(result.state, shots, static_cast<int>(step.categories.size()),
                                    static_cast<int>(step.components.size()));
    }
    const KnowledgeMatrix kmt = km.restrict_to(plan.category_order(t), plan.component_order(t));
    const std::vector<Sample> seen_test = remap_to_plan(test_set, plan, t);
    std::vector<Sample> base_test;
    for (const auto& s : seen_test)
      if (s.category < base_count) base_test.push_back(s);
    SessionReport r;
    r.session = t;
    r.known_categories = result.state.config.num_categories;
    r.known_components = result.state.config.num_components;
    r.virtual_categories = result.state.has_param("rec_virtual") ? result.state.config.virtual_categories : 0;
    r.virtual_components = result.state.has_param("seg_virtual") ? result.state.config.virtual_components : 0;
    r.report = evaluate(result.state, seen_test, kmt, cfg.base.flags.rsm);
    r.base_acc = evaluate(result.state, base_test, kmt, cfg.base.flags.rsm).acc_at_1;
    result.sessions.push_back(std::move(r));
    result.category_banks.push_back(category_bank(result.state));
    result.component_banks.push_back(component_bank(result.state));
  }
  return result;
}

}  // namespace sketchime
