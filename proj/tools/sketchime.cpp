// sketchime: training, evaluation, adaptation, incremental sessions, data
// tools and the recommendation service.

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>

#include "sketchime/checkpoint.hpp"
#include "sketchime/domain_adapt.hpp"
#include "sketchime/errors.hpp"
#include "sketchime/fscil.hpp"
#include "sketchime/serving.hpp"
#include "sketchime/spg.hpp"
#include "sketchime/synth.hpp"
#include "sketchime/trainer.hpp"

using namespace sketchime;
using nlohmann::json;

namespace {

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw ConfigError("config " + path + " is not a JSON object");
  return j;
}

void emit(const json& j, const std::string& path) {
  if (path.empty()) {
    std::cout << j.dump(2) << '\n';
    return;
  }
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path);
  out << j.dump(2) << '\n';
}

void write_knowledge(const KnowledgeMatrix& km, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path);
  write_knowledge_metadata(out, km);
}

std::vector<Sample> load_samples(const std::string& path, const ModelConfig& model) {
  if (path.empty()) return {};
  return prepare_dataset(read_ndjson_file(path), model);
}

template <class T>
void set_if(T& field, const std::optional<T>& v) {
  if (v) field = *v;
}

// ---- train

struct TrainArgs {
  std::string config, profile = "desk", out = "model.ckpt", report;
  std::optional<std::string> train, test, knowledge, checkpoint_dir;
  std::optional<double> lr, lambda1, gamma_r;
  std::optional<int> batch, epochs, checkpoint_every, points, image;
  std::optional<std::uint64_t> seed;
  std::optional<bool> cfa, rsm, kld;
};

void add_train_flags(CLI::App* cmd, TrainArgs& a) {
  cmd->add_option("--config", a.config, "JSON train config; flags override it");
  cmd->add_option("--profile", a.profile, "desk or full")->check(CLI::IsMember({"desk", "full"}));
  cmd->add_option("--train", a.train, "training NDJSON");
  cmd->add_option("--test", a.test, "test NDJSON");
  cmd->add_option("--knowledge", a.knowledge, "knowledge metadata NDJSON");
  cmd->add_option("--lr", a.lr);
  cmd->add_option("--batch", a.batch);
  cmd->add_option("--epochs", a.epochs);
  cmd->add_option("--seed", a.seed);
  cmd->add_option("--lambda1", a.lambda1);
  cmd->add_option("--gamma-r", a.gamma_r, "knowledge matrix confidence");
  cmd->add_option("--points", a.points, "points per resampled sketch");
  cmd->add_option("--image", a.image, "raster side length");
  cmd->add_option("--cfa", a.cfa);
  cmd->add_option("--rsm", a.rsm);
  cmd->add_option("--kld", a.kld);
  cmd->add_option("--checkpoint-dir", a.checkpoint_dir);
  cmd->add_option("--checkpoint-every", a.checkpoint_every);
}

// Profile defaults, then the config file, then flags.
TrainConfig resolve_train(const TrainArgs& a, KnowledgeMatrix& km) {
  json file = a.config.empty() ? json::object() : read_json_file(a.config);
  std::string kpath = a.knowledge.value_or(file.value("knowledge_path", ""));
  if (kpath.empty()) throw ConfigError("a knowledge metadata file is required (--knowledge)");
  km = load_knowledge_metadata(kpath, a.gamma_r.value_or(kDefaultGammaR));

  TrainConfig c = a.profile == "full" ? TrainConfig::full(km.num_categories(), km.num_components())
                                      : TrainConfig::desk(km.num_categories(), km.num_components());
  from_json(file, c);
  c.knowledge_path = kpath;
  set_if(c.train_path, a.train);
  set_if(c.test_path, a.test);
  set_if(c.lr, a.lr);
  set_if(c.batch, a.batch);
  set_if(c.epochs, a.epochs);
  set_if(c.seed, a.seed);
  set_if(c.lambda1, a.lambda1);
  set_if(c.model.point_count, a.points);
  set_if(c.model.image_size, a.image);
  set_if(c.flags.cfa, a.cfa);
  set_if(c.flags.rsm, a.rsm);
  set_if(c.flags.kld, a.kld);
  c.model.use_cfa = c.flags.cfa;
  set_if(c.checkpoint_dir, a.checkpoint_dir);
  set_if(c.checkpoint_every, a.checkpoint_every);
  c.validate();
  return c;
}

int run_train(const TrainArgs& a) {
  KnowledgeMatrix km;
  const TrainConfig c = resolve_train(a, km);
  if (c.train_path.empty()) throw ConfigError("a training set is required (--train)");
  const auto tr = load_samples(c.train_path, c.model), te = load_samples(c.test_path, c.model);
  const TrainResult r = train(c, tr, te, km, [](const EpochLog& e) {
    std::cerr << "epoch " << e.epoch << " loss " << e.loss << " seg " << e.segmentation << " rec " << e.recognition
              << " kl " << e.kl << '\n';
  });
  save_checkpoint(a.out, r.state, km);
  json rep = r.report_json();
  rep["config"] = c;
  rep["checkpoint"] = a.out;
  emit(rep, a.report);
  return 0;
}

// ---- eval

struct EvalArgs {
  std::string model, data, report;
  bool rsm = false;
};

int run_eval(const EvalArgs& a) {
  const Checkpoint ck = load_checkpoint(a.model);
  const auto data = load_samples(a.data, ck.state.config);
  validate_labels(data, ck.km, false);
  const MetricReport r = evaluate(ck.state, data, ck.km, a.rsm);
  const SplitPMetric split = p_metric_by_recognition(model_predictor(ck.state, ck.km, a.rsm), data);
  emit({{"report", r},
        {"rsm", a.rsm},
        {"manifest", manifest_digest(data)},
        {"p_metric_by_recognition",
         {{"correct", split.correct}, {"wrong", split.wrong}, {"n_correct", split.n_correct},
          {"n_wrong", split.n_wrong}}}},
       a.report);
  return 0;
}

// ---- adapt

struct AdaptArgs {
  std::string config, model, source, target, holdout, out = "adapted.ckpt", report;
  std::optional<int> steps, shots, source_shots, batch;
  std::optional<double> lambda, lr;
  std::optional<std::uint64_t> seed;
};

int run_adapt(const AdaptArgs& a) {
  DAConfig d;
  if (!a.config.empty()) d = read_json_file(a.config).get<DAConfig>();
  set_if(d.steps, a.steps);
  set_if(d.shots_target, a.shots);
  set_if(d.shots_source, a.source_shots);
  set_if(d.batch, a.batch);
  set_if(d.lambda_adv, a.lambda);
  set_if(d.lr, a.lr);
  set_if(d.seed, a.seed);
  d.validate();
  const Checkpoint ck = load_checkpoint(a.model);
  const auto source = load_samples(a.source, ck.state.config), target = load_samples(a.target, ck.state.config);
  const DAResult r = adapt(ck.state, source, target, ck.km, d);
  save_checkpoint(a.out, r.state, ck.km);
  json rep{{"config", d},
           {"checkpoint", a.out},
           {"source_used", r.source_used},
           {"target_used", r.target_used},
           {"disc_accuracy_start", r.disc_accuracy_start},
           {"disc_accuracy_end", r.disc_accuracy_end}};
  if (!a.holdout.empty()) {
    const auto held = load_samples(a.holdout, ck.state.config);
    rep["holdout_before"] = evaluate(ck.state, held, ck.km, false);
    rep["holdout_after"] = evaluate(r.state, held, ck.km, false);
  }
  emit(rep, a.report);
  return 0;
}

// ---- cil

struct CilArgs {
  TrainArgs train;
  std::string plan, base, fscil_config;
  std::optional<double> gamma;
  bool no_virtual = false;
};

int run_cil(const CilArgs& a) {
  KnowledgeMatrix km;
  FSCILConfig f;
  f.base = resolve_train(a.train, km);
  if (!a.fscil_config.empty()) {
    // Base training settings come from --config and flags.
    json j = read_json_file(a.fscil_config);
    j.erase("base");
    from_json(j, f);
  }
  set_if(f.gamma, a.gamma);
  if (a.no_virtual) f.virtual_prototypes = false;
  f.validate();
  const SessionPlan plan = load_session_plan(a.plan);
  if (f.base.train_path.empty()) throw ConfigError("a training set is required (--train)");
  const auto tr = load_samples(f.base.train_path, f.base.model), te = load_samples(f.base.test_path, f.base.model);
  std::optional<ModelState> base;
  if (!a.base.empty()) base = load_checkpoint(a.base).state;
  const SessionsResult r = run_sessions(plan, f, tr, te, km, base, [](const EpochLog& e) {
    std::cerr << "base epoch " << e.epoch << " loss " << e.loss << '\n';
  });
  const int last = static_cast<int>(plan.sessions.size());
  save_checkpoint(a.train.out, r.state, km.restrict_to(plan.category_order(last), plan.component_order(last)));
  emit({{"plan", plan}, {"config", f}, {"sessions", r.sessions}, {"checkpoint", a.train.out}}, a.train.report);
  return 0;
}

// ---- import-spg

struct SpgArgs {
  std::string root, out = "spg.ndjson", knowledge_out = "spg_knowledge.ndjson", part_attribute = "class";
  std::vector<std::string> categories;
  int max_categories = 0;
  double gamma_r = kDefaultGammaR;
};

int run_import(const SpgArgs& a) {
  SpgImportOptions o;
  o.categories = a.categories;
  o.max_categories = a.max_categories;
  o.part_attribute = a.part_attribute;
  const SpgDataset d = import_spg(a.root, o);
  write_ndjson_file(a.out, d.sketches);
  write_knowledge(d.knowledge(a.gamma_r), a.knowledge_out);
  std::cout << json{{"sketches", d.sketches.size()},
                    {"categories", d.category_names},
                    {"components", d.component_names},
                    {"out", a.out},
                    {"knowledge", a.knowledge_out}}
                   .dump(2)
            << '\n';
  return 0;
}

// ---- synth

struct SynthArgs {
  std::string spec, out = "corpus.ndjson", knowledge_out, dump_spec;
  std::optional<int> samples, style;
  std::optional<double> slant_offset;
  std::uint64_t seed = 0;
  double gamma_r = kDefaultGammaR;
};

int run_synth(const SynthArgs& a) {
  SynthSpec s = a.spec.empty() ? SynthSpec::desk_default() : load_synth_spec(a.spec);
  set_if(s.samples_per_category, a.samples);
  set_if(s.style_id, a.style);
  set_if(s.slant_offset, a.slant_offset);
  s.validate();
  if (!a.dump_spec.empty()) {
    std::ofstream out(a.dump_spec);
    if (!out) throw ConfigError("cannot write " + a.dump_spec);
    out << dump_synth_spec(s);
  }
  const auto corpus = generate_synthetic_corpus(s, a.seed);
  write_ndjson_file(a.out, corpus);
  if (!a.knowledge_out.empty())
    write_knowledge(build_knowledge_matrix(s.category_components(), a.gamma_r, static_cast<int>(s.components.size())),
                    a.knowledge_out);
  std::cerr << "wrote " << corpus.size() << " sketches to " << a.out << '\n';
  return 0;
}

// ---- serve

struct ServeArgs {
  std::optional<std::string> model, store, source, da_config;
  std::string host = "127.0.0.1";
  std::optional<int> port;
  bool sync_adapt = false;
};

int run_serve(const ServeArgs& a) {
  ServiceConfig c = ServiceConfig::from_env();
  set_if(c.model_path, a.model);
  set_if(c.store_dir, a.store);
  set_if(c.source_path, a.source);
  if (a.da_config) c.da = read_json_file(*a.da_config).get<DAConfig>();
  c.async_adapt = !a.sync_adapt;
  int port = 8080;
  if (const char* v = std::getenv("SKETCHIME_PORT")) port = std::atoi(v);
  set_if(port, a.port);
  if (port < 0 || port > 65535) throw ConfigError("port out of range");

  Service svc(c);
  if (!svc.current("")) std::cerr << "warning: no model loaded; /v1/recognize answers 503\n";
  HttpServer server(svc);
  std::cerr << "listening on " << a.host << ':' << port << '\n';
  if (!server.listen(a.host, port)) throw ConfigError("cannot listen on " + a.host + ":" + std::to_string(port));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SketchIME recognition, segmentation and adaptation toolkit"};
  app.require_subcommand(1);

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "train a model and write a checkpoint and report");
  add_train_flags(train_cmd, ta);
  train_cmd->add_option("--out", ta.out, "checkpoint path");
  train_cmd->add_option("--report", ta.report, "report path (default stdout)");

  EvalArgs ea;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a labelled NDJSON set");
  eval_cmd->add_option("--model", ea.model)->required();
  eval_cmd->add_option("--data", ea.data)->required();
  eval_cmd->add_flag("--rsm", ea.rsm, "apply recognition-to-segmentation gating");
  eval_cmd->add_option("--report", ea.report);

  AdaptArgs aa;
  auto* adapt_cmd = app.add_subcommand("adapt", "few-shot domain adaptation to a new sketching style");
  adapt_cmd->add_option("--config", aa.config, "JSON adaptation config; flags override it");
  adapt_cmd->add_option("--model", aa.model)->required();
  adapt_cmd->add_option("--source", aa.source, "labelled source-domain NDJSON")->required();
  adapt_cmd->add_option("--target", aa.target, "target-domain NDJSON; semantics optional")->required();
  adapt_cmd->add_option("--holdout", aa.holdout, "target-domain NDJSON evaluated before and after");
  adapt_cmd->add_option("--out", aa.out);
  adapt_cmd->add_option("--report", aa.report);
  adapt_cmd->add_option("--steps", aa.steps);
  adapt_cmd->add_option("--shots", aa.shots, "target shots per class, 0 keeps all");
  adapt_cmd->add_option("--source-shots", aa.source_shots, "source shots per class, 0 keeps all");
  adapt_cmd->add_option("--batch", aa.batch);
  adapt_cmd->add_option("--lambda", aa.lambda, "adversarial weight");
  adapt_cmd->add_option("--lr", aa.lr);
  adapt_cmd->add_option("--seed", aa.seed);

  CilArgs ca;
  ca.train.out = "cil.ckpt";
  auto* cil_cmd = app.add_subcommand("cil", "base training plus few-shot class-incremental sessions");
  add_train_flags(cil_cmd, ca.train);
  cil_cmd->add_option("--plan", ca.plan, "session plan JSON")->required();
  cil_cmd->add_option("--fscil-config", ca.fscil_config, "JSON incremental config");
  cil_cmd->add_option("--base", ca.base, "start from this checkpoint instead of training");
  cil_cmd->add_option("--gamma", ca.gamma, "weight of the virtual-class terms");
  cil_cmd->add_flag("--no-virtual", ca.no_virtual, "train the base session without virtual prototypes");
  cil_cmd->add_option("--out", ca.train.out);
  cil_cmd->add_option("--report", ca.train.report);

  SpgArgs sa;
  auto* spg_cmd = app.add_subcommand("import-spg", "convert an SPG-style SVG tree into NDJSON plus knowledge");
  spg_cmd->add_option("--root", sa.root, "<root>/<category>/<sketch>.svg")->required();
  spg_cmd->add_option("--out", sa.out);
  spg_cmd->add_option("--knowledge-out", sa.knowledge_out);
  spg_cmd->add_option("--categories", sa.categories, "category directories to keep")->delimiter(',');
  spg_cmd->add_option("--max-categories", sa.max_categories, "keep the first N categories, 0 keeps all");
  spg_cmd->add_option("--part-attribute", sa.part_attribute);
  spg_cmd->add_option("--gamma-r", sa.gamma_r);

  SynthArgs ya;
  auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic labelled corpus");
  synth_cmd->add_option("--spec", ya.spec, "key = value spec file (default: desk corpus)");
  synth_cmd->add_option("--seed", ya.seed);
  synth_cmd->add_option("--samples", ya.samples, "samples per category");
  synth_cmd->add_option("--style", ya.style, "writer style id");
  synth_cmd->add_option("--slant-offset", ya.slant_offset);
  synth_cmd->add_option("--out", ya.out);
  synth_cmd->add_option("--knowledge-out", ya.knowledge_out);
  synth_cmd->add_option("--dump-spec", ya.dump_spec, "write the effective spec");
  synth_cmd->add_option("--gamma-r", ya.gamma_r);

  ServeArgs va;
  auto* serve_cmd = app.add_subcommand("serve", "run the HTTP recommendation service");
  serve_cmd->add_option("--model", va.model, "checkpoint (env SKETCHIME_MODEL)");
  serve_cmd->add_option("--store", va.store, "feedback store directory (env SKETCHIME_STORE)");
  serve_cmd->add_option("--source", va.source, "source exemplar NDJSON (env SKETCHIME_SOURCE)");
  serve_cmd->add_option("--da-config", va.da_config, "JSON adaptation config");
  serve_cmd->add_option("--host", va.host);
  serve_cmd->add_option("--port", va.port, "port (env SKETCHIME_PORT, default 8080)");
  serve_cmd->add_flag("--sync-adapt", va.sync_adapt, "run adaptation inside the request");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*train_cmd) return run_train(ta);
    if (*eval_cmd) return run_eval(ea);
    if (*adapt_cmd) return run_adapt(aa);
    if (*cil_cmd) return run_cil(ca);
    if (*spg_cmd) return run_import(sa);
    if (*synth_cmd) return run_synth(ya);
    if (*serve_cmd) return run_serve(va);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.exit_code();
  } catch (const json::exception& e) {
    std::cerr << "error: bad JSON: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
