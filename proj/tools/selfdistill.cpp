// Copyright 2026 The selfdistill Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// selfdistill command-line front end.

#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "selfdistill/aspect_scoring.hpp"
#include "selfdistill/bootstrap.hpp"
#include "selfdistill/convergence_lab.hpp"
#include "selfdistill/diversity_sampler.hpp"
#include "selfdistill/gradient_io.hpp"
#include "selfdistill/influence.hpp"
#include "selfdistill/snippet_pool.hpp"
#include "selfdistill/synthesis_client.hpp"
#include "selfdistill/toy_model.hpp"

namespace fs = std::filesystem;
using namespace selfdistill;
using influence::GradientFileHeader;
using influence::GradientFileReader;
using influence::GradientFileWriter;
using influence::index_path;
using influence::ToyTrainingMeta;

namespace {

void emit(const std::optional<std::string>& out, const std::vector<json>& records) {
  if (out) {
    write_jsonl(*out, records);
  } else {
    std::cout << to_jsonl(records);
  }
}

std::vector<InstructionSample> load_samples(const fs::path& path) {
  std::vector<InstructionSample> out;
  for (const auto& r : read_jsonl(path)) out.push_back(sample_from_json(r));
  return out;
}

std::vector<std::string> load_texts(const fs::path& path) {
  std::vector<std::string> out;
  for (const auto& r : read_jsonl(path)) out.push_back(r.at("text").get<std::string>());
  return out;
}

std::shared_ptr<synth::ChatBackend> make_backend(const std::optional<std::string>& mock) {
  if (mock) return synth::MockBackend::from_file(*mock);
  return std::make_shared<synth::HttpChatBackend>();
}

// --- pool build ---------------------------------------------------------

struct PoolArgs {
  std::string input, output;
  std::optional<std::string> removals, decontam;
  std::size_t perms = 128, bands = 32, rows = 4, shingle = 5, ngram = 10, rounds = 2;
  double threshold = 0.5;
  std::uint64_t seed = 0;
  std::vector<std::string> blocklist = {"os", "sys"};
};

int cmd_pool_build(const PoolArgs& a) {
  pool::PoolOptions o;
  o.dedup = {a.perms, a.bands, a.rows, a.threshold, a.shingle, a.seed, a.rounds};
  o.decontam_ngram = a.ngram;
  o.blocklist = {a.blocklist.begin(), a.blocklist.end()};
  if (a.decontam) o.benchmark_corpus = load_texts(*a.decontam);
  std::vector<pool::CodeSnippet> snippets;
  for (const auto& r : read_jsonl(a.input)) snippets.push_back(pool::snippet_from_json(r));
  const std::size_t input = snippets.size();
  const auto result = pool::build_pool(std::move(snippets), o);
  std::vector<json> kept, removed;
  for (const auto& s : result.pool) kept.push_back(pool::snippet_to_json(s));
  for (const auto& r : result.removals) removed.push_back(pool::removal_to_json(r));
  write_jsonl(a.output, kept);
  write_jsonl(a.removals.value_or(a.output + ".removals"), removed);
  std::map<std::string, int> by_stage;
  for (const auto& r : result.removals) by_stage[r.stage]++;
  std::cerr << "pool: " << input << " in, " << kept.size() << " kept";
  for (const auto& [stage, n] : by_stage) std::cerr << ", " << stage << " " << n;
  std::cerr << "\n";
  return 0;
}

// --- sample stratify ----------------------------------------------------

struct SampleArgs {
  std::string pool, embeddings, categories;
  std::optional<std::string> out;
  std::size_t per_category = 1000;
  std::uint64_t seed = 0;
};

int cmd_sample(const SampleArgs& a) {
  const auto cats = sampler::category_set_from_json(read_jsonl(a.categories));
  std::map<std::string, std::vector<double>> emb;
  for (const auto& r : read_jsonl(a.embeddings)) {
    auto e = sampler::embedding_from_json(r);
    emb[e.snippet_id] = std::move(e.vector);
  }
  std::map<std::string, pool::CodeSnippet> by_id;
  std::vector<sampler::CategorizedSnippet> members;
  std::size_t missing = 0;
  for (const auto& r : read_jsonl(a.pool)) {
    auto s = pool::snippet_from_json(r);
    const auto it = emb.find(s.id);
    if (it == emb.end()) {
      ++missing;
      continue;
    }
    s.category = sampler::assign_category({s.id, it->second}, cats);
    members.push_back({s.id, *s.category});
    by_id[s.id] = std::move(s);
  }
  if (missing) std::cerr << "warning: " << missing << " snippets have no embedding and were skipped\n";
  const auto sel = sampler::stratified_sample(members, a.per_category, a.seed);
  for (const auto& u : sel.underflows) {
    std::cerr << "warning: category " << u.category << " has " << u.available << " of " << u.requested
              << " requested\n";
  }
  std::vector<json> out;
  for (const auto& id : sel.all_ids()) out.push_back(pool::snippet_to_json(by_id.at(id)));
  emit(a.out, out);
  return 0;
}

// --- synthesize ---------------------------------------------------------

struct SynthArgs {
  std::string snippets, checkpoints, out;
  std::optional<std::string> mock;
  int iteration = 1;
};

int cmd_synthesize(const SynthArgs& a) {
  const auto cfg = synth::load_synthesis_config(a.checkpoints);
  auto backend = make_backend(a.mock);
  std::vector<pool::CodeSnippet> snippets;
  for (const auto& r : read_jsonl(a.snippets)) snippets.push_back(pool::snippet_from_json(r));
  synth::GenerationOptions g;
  g.global_parallel = cfg.global_parallel;
  g.iteration = a.iteration;
  g.synthesis_template = cfg.templates.synthesis;
  const auto batches = synth::collect_candidates(snippets, cfg.checkpoints, *backend, g);
  std::vector<json> samples, slots;
  std::size_t failed = 0;
  for (const auto& b : batches) {
    for (const auto& s : b.slots) {
      slots.push_back(synth::slot_to_json(b.snippet_id, s));
      if (s.ok()) {
        samples.push_back(sample_to_json(*s.sample));
      } else {
        ++failed;
      }
    }
  }
  write_jsonl(a.out, samples);
  write_jsonl(a.out + ".slots", slots);
  std::cerr << "synthesize: " << slots.size() << " slots, " << samples.size() << " candidates, " << failed
            << " failed\n";
  return 0;
}

// --- score / fit-weights ------------------------------------------------

struct ScoreArgs {
  std::string in, scorer, weights;
  std::optional<std::string> out, mock, aggregation;
  bool best = false;
};

int cmd_score(const ScoreArgs& a) {
  // Either a full synthesis config with a "scorer" entry or a bare endpoint
  // with an optional "template" path.
  const json j = json::parse(read_file(a.scorer));
  synth::EndpointConfig scorer;
  std::string tmpl = "[problem]\n{problem}\n[solution]\n{solution}";
  double temperature = synth::kScorerTemperature;
  int parallel = 8;
  if (j.contains("checkpoints")) {
    const auto cfg = synth::synthesis_config_from_json(j, fs::path(a.scorer).parent_path());
    if (!cfg.scorer) throw Error(ErrorCode::kInvalidArgument, a.scorer + ": no scorer endpoint");
    scorer = *cfg.scorer;
    tmpl = cfg.templates.scoring;
    temperature = cfg.scorer_temperature;
    parallel = cfg.global_parallel;
  } else {
    scorer = synth::endpoint_from_json(j);
    temperature = j.value("temperature", temperature);
    if (j.contains("template")) {
      const fs::path p = j["template"].get<std::string>();
      tmpl = read_file(p.is_absolute() ? p : fs::path(a.scorer).parent_path() / p);
    }
  }
  const auto w = scoring::weights_from_json(json::parse(read_file(a.weights)));
  const auto strategy = scoring::aggregation_from_string(a.aggregation.value_or("weighted"));
  auto samples = load_samples(a.in);
  auto backend = make_backend(a.mock);
  const auto outcomes = synth::request_scores(samples, scorer, tmpl, temperature, *backend, parallel);
  std::vector<json> out;
  std::map<std::string, std::vector<InstructionSample>> by_snippet;
  std::vector<std::string> order;
  std::size_t failed = 0;
  for (std::size_t k = 0; k < samples.size(); ++k) {
    auto& s = samples[k];
    std::string error = outcomes[k].error;
    if (outcomes[k].reply) {
      try {
        s.aspect_scores = scoring::parse_aspect_scores(*outcomes[k].reply, w.w.size());
        s.aggregate_score = scoring::aggregate(*s.aspect_scores, w, strategy);
      } catch (const Error& e) {
        error = e.what();
      }
    }
    if (!s.aspect_scores) {
      ++failed;
      std::cerr << "warning: " << s.sample_id << ": " << error << "\n";
      continue;
    }
    if (!by_snippet.count(s.snippet_id)) order.push_back(s.snippet_id);
    by_snippet[s.snippet_id].push_back(s);
    out.push_back(sample_to_json(s));
  }
  if (a.best) {
    out.clear();
    for (const auto& id : order) {
      out.push_back(sample_to_json(scoring::select_best_candidate(by_snippet[id], w, strategy)));
    }
  }
  emit(a.out, out);
  std::cerr << "score: " << samples.size() - failed << " scored, " << failed << " failed\n";
  return 0;
}

struct FitArgs {
  std::string experiments, out;
  double lambda = 1.0;
};

int cmd_fit_weights(const FitArgs& a) {
  std::vector<scoring::ExperimentRecord> recs;
  for (const auto& r : read_jsonl(a.experiments)) recs.push_back(scoring::experiment_from_json(r));
  const auto w = scoring::fit_weights(recs, a.lambda);
  write_file_atomic(a.out, scoring::weights_to_json(w).dump(2) + "\n");
  std::cerr << "fit-weights: residual " << w.diagnostics.residual_norm << ", condition "
            << w.diagnostics.condition_estimate << "\n";
  return 0;
}

// --- influence ----------------------------------------------------------

struct ProjectArgs {
  std::string gradients;
  std::optional<std::string> out;
  std::size_t k = 8192;
  std::uint64_t seed = 0;
};

int cmd_project(const ProjectArgs& a) {
  const GradientFileReader in{a.gradients};
  if (in.header().projected) throw Error(ErrorCode::kInvalidArgument, a.gradients + " is already projected");
  const auto p = influence::build_projection(in.header().dim, a.k, a.seed);
  GradientFileHeader h = in.header();
  h.count = 0;
  h.projected = true;
  h.k = a.k;
  h.seed = a.seed;
  const fs::path out = a.out.value_or(a.gradients + ".proj");
  fs::remove(out);
  fs::remove(index_path(out));
  GradientFileWriter w(out, h);
  for (std::size_t i = 0; i < in.count(); ++i) {
    const auto row = in.row(i);
    w.append(in.sample_ids()[i], influence::project_values(row, p));
  }
  w.close();
  std::cerr << "project: " << in.count() << " rows, " << in.header().dim << " -> " << a.k << "\n";
  return 0;
}

std::vector<influence::ProjectedGradient> read_projected(const fs::path& path) {
  const GradientFileReader r{path};
  if (!r.header().projected) throw Error(ErrorCode::kInvalidArgument, path.string() + " is not projected");
  std::vector<influence::ProjectedGradient> out;
  for (std::size_t i = 0; i < r.count(); ++i) {
    influence::ProjectedGradient g;
    g.sample_id = r.sample_ids()[i];
    g.values = r.row(i);
    g.projection_seed = r.header().seed;
    double n = 0;
    for (double x : g.values) n += x * x;
    g.norm = std::sqrt(n);
    out.push_back(std::move(g));
  }
  return out;
}

struct InfluenceScoreArgs {
  std::string self, anchor_from;
  std::optional<std::string> out;
  std::optional<std::size_t> quota;
};

int cmd_influence_score(const InfluenceScoreArgs& a) {
  const auto prop = read_projected(a.anchor_from);
  const auto self = read_projected(a.self);
  if (!prop.empty() && !self.empty() && prop[0].projection_seed != self[0].projection_seed) {
    throw Error(ErrorCode::kMixedProjections, "anchor and self files use different projection seeds");
  }
  const auto anchor = influence::anchor_gradient(prop);
  std::vector<influence::InfluenceRecord> recs;
  std::vector<json> out;
  for (const auto& g : self) {
    try {
      recs.push_back(influence::influence_score(g, anchor));
      out.push_back({{"sample_id", recs.back().sample_id}, {"influence", recs.back().influence}});
    } catch (const Error& e) {
      std::cerr << "warning: " << g.sample_id << ": " << e.what() << "\n";
    }
  }
  emit(a.out, out);
  if (a.quota) {
    const auto top = influence::select_top_influential(recs, *a.quota);
    std::cerr << "selected " << top.sample_ids.size() << " of quota " << *a.quota << " (shortfall "
              << top.shortfall << ")\n";
  }
  return 0;
}

struct ToyTrainArgs {
  std::string proprietary, out;
  ToyTrainingMeta meta;
};

int cmd_toy_train(const ToyTrainArgs& a) {
  const auto samples = load_samples(a.proprietary);
  const auto m = influence::toy_reference_train(samples, a.meta);
  influence::save_toy_model(a.out, m);
  std::cerr << "toy-train: loss " << m.loss_history.front() << " -> " << m.loss_history.back() << " over "
            << a.meta.steps << " steps\n";
  return 0;
}

struct ToyGradArgs {
  std::string model, samples, out;
};

int cmd_toy_grad(const ToyGradArgs& a) {
  const auto m = influence::load_toy_model(a.model);
  const auto samples = load_samples(a.samples);
  GradientFileHeader h;
  h.dim = influence::ToyReferenceModel::kDim;
  fs::remove(a.out);
  fs::remove(index_path(a.out));
  GradientFileWriter w(a.out, h);
  for (const auto& s : samples) w.append(s.sample_id, influence::toy_reference_gradient(s, m).values);
  w.close();
  std::cerr << "toy-grad: " << samples.size() << " gradients of dimension " << h.dim << "\n";
  return 0;
}

// --- iterate / status ---------------------------------------------------

struct IterateArgs {
  std::string plan, state, services;
  std::optional<std::string> mock, stop_after;
};

int cmd_iterate(const IterateArgs& a) {
  const auto config = bootstrap::load_run_config(a.plan);
  auto services = bootstrap::load_services(a.services, a.mock ? std::optional<fs::path>(*a.mock) : std::nullopt);
  bootstrap::RunOptions opts;
  if (a.stop_after) opts.stop_after = bootstrap::stage_from_string(*a.stop_after);
  opts.log = [](const std::string& line) { std::cerr << line << "\n"; };
  try {
    const auto manifests = bootstrap::run_plan(a.state, config, services, opts);
    for (const auto& m : manifests) std::cout << m.dump() << "\n";
  } catch (const bootstrap::StageFailure& e) {
    std::cerr << "stage " << bootstrap::to_string(e.stage()) << " failed: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

int cmd_status(const std::string& state) {
  std::cout << bootstrap::status_table(bootstrap::resume(state));
  return 0;
}

// --- simulate -----------------------------------------------------------

struct SimArgs {
  std::size_t n = 10, steps = 50;
  double lt = 0.8, lg = 0.5;
  std::uint64_t seed = 0;
  std::optional<std::string> out;
};

int cmd_simulate(const SimArgs& a) {
  using namespace convergence;
  const auto sys = make_affine_system(a.seed, a.n, a.lt, a.lg);
  Rng rng(hash_combine(a.seed, 0x6d30));
  Eigen::VectorXd m0(static_cast<Eigen::Index>(a.n));
  for (Eigen::Index i = 0; i < m0.size(); ++i) m0(i) = rng.normal();
  const auto traj = iterate_self_distillation(sys, m0, a.steps);
  const auto report = verify_contraction(traj, sys);
  if (a.out) {
    std::ofstream f(*a.out);
    if (!f) throw Error(ErrorCode::kIoError, "cannot write " + *a.out);
    write_csv(f, report);
  } else {
    write_csv(std::cout, report);
  }
  std::cerr << "q = " << report.q << ", "
            << (report.status == TrajectoryStatus::kContractive ? "contractive" : "non-contractive")
            << ", ratio violations " << report.ratio_violations << ", bound violations " << report.bound_violations;
  if (report.nash_residual) std::cerr << ", fixed-point residual " << *report.nash_residual;
  std::cerr << "\n";
  return report.status == TrajectoryStatus::kContractive && !report.pass ? 1 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"selfdistill: code instruction data bootstrapping"};
  app.require_subcommand(1);
  int rc = 0;

  auto* pool_cmd = app.add_subcommand("pool", "snippet pool")->require_subcommand(1);
  PoolArgs pa;
  auto* build = pool_cmd->add_subcommand("build", "dedup, validity filter and decontamination");
  build->add_option("--input", pa.input, "snippet records (JSONL)")->required();
  build->add_option("--output", pa.output, "kept snippets (JSONL)")->required();
  build->add_option("--removals", pa.removals, "removal report (default <output>.removals)");
  build->add_option("--perms", pa.perms);
  build->add_option("--bands", pa.bands);
  build->add_option("--rows", pa.rows);
  build->add_option("--shingle", pa.shingle);
  build->add_option("--threshold", pa.threshold);
  build->add_option("--lsh-rounds", pa.rounds);
  build->add_option("--decontam", pa.decontam, "benchmark texts (JSONL with a text field)");
  build->add_option("--ngram", pa.ngram);
  build->add_option("--seed", pa.seed);
  build->add_option("--blocklist", pa.blocklist, "blocked imports");
  build->callback([&] { rc = cmd_pool_build(pa); });

  auto* sample_cmd = app.add_subcommand("sample", "category-stratified sampling")->require_subcommand(1);
  SampleArgs sa;
  auto* strat = sample_cmd->add_subcommand("stratify", "assign categories and draw per category");
  strat->add_option("--pool", sa.pool)->required();
  strat->add_option("--embeddings", sa.embeddings)->required();
  strat->add_option("--categories", sa.categories)->required();
  strat->add_option("--per-category", sa.per_category);
  strat->add_option("--seed", sa.seed);
  strat->add_option("--out", sa.out);
  strat->callback([&] { rc = cmd_sample(sa); });

  SynthArgs ya;
  auto* syn = app.add_subcommand("synthesize", "generate M x N candidates per snippet");
  syn->add_option("--snippets", ya.snippets)->required();
  syn->add_option("--checkpoints", ya.checkpoints, "synthesis config")->required();
  syn->add_option("--out", ya.out, "candidates (JSONL); slot records go to <out>.slots")->required();
  syn->add_option("--mock", ya.mock, "mock transcript instead of live endpoints");
  syn->add_option("--iteration", ya.iteration);
  syn->callback([&] { rc = cmd_synthesize(ya); });

  ScoreArgs ca;
  auto* score = app.add_subcommand("score", "aspect-score candidates");
  score->add_option("--in", ca.in)->required();
  score->add_option("--scorer", ca.scorer, "endpoint config")->required();
  score->add_option("--weights", ca.weights)->required();
  score->add_option("--aggregation", ca.aggregation, "weighted | raw | average");
  score->add_option("--out", ca.out);
  score->add_option("--mock", ca.mock);
  score->add_flag("--best", ca.best, "keep only the best candidate per snippet");
  score->callback([&] { rc = cmd_score(ca); });

  FitArgs fa;
  auto* fit = app.add_subcommand("fit-weights", "ridge fit of aspect weights");
  fit->add_option("--experiments", fa.experiments)->required();
  fit->add_option("--lambda", fa.lambda);
  fit->add_option("--out", fa.out)->required();
  fit->callback([&] { rc = cmd_fit_weights(fa); });

  auto* inf = app.add_subcommand("influence", "gradient influence")->require_subcommand(1);
  ProjectArgs pj;
  auto* proj = inf->add_subcommand("project", "random-project a gradient file");
  proj->add_option("--gradients", pj.gradients)->required();
  proj->add_option("--k", pj.k);
  proj->add_option("--seed", pj.seed);
  proj->add_option("--out", pj.out, "default <gradients>.proj");
  proj->callback([&] { rc = cmd_project(pj); });
  InfluenceScoreArgs is;
  auto* isc = inf->add_subcommand("score", "cosine against the proprietary anchor");
  isc->add_option("--self", is.self, "projected self-distilled gradients")->required();
  isc->add_option("--anchor-from", is.anchor_from, "projected proprietary gradients")->required();
  isc->add_option("--out", is.out);
  isc->add_option("--quota", is.quota);
  isc->callback([&] { rc = cmd_influence_score(is); });
  ToyTrainArgs tt;
  auto* toy = inf->add_subcommand("toy-train", "train the bigram reference model");
  toy->add_option("--proprietary", tt.proprietary)->required();
  toy->add_option("--steps", tt.meta.steps);
  toy->add_option("--learning-rate", tt.meta.learning_rate);
  toy->add_option("--seed", tt.meta.seed);
  toy->add_option("--out", tt.out)->required();
  toy->callback([&] { rc = cmd_toy_train(tt); });
  ToyGradArgs tg;
  auto* tgc = inf->add_subcommand("toy-grad", "per-sample gradients of a toy model");
  tgc->add_option("--model", tg.model)->required();
  tgc->add_option("--samples", tg.samples)->required();
  tgc->add_option("--out", tg.out)->required();
  tgc->callback([&] { rc = cmd_toy_grad(tg); });

  IterateArgs ia;
  auto* it = app.add_subcommand("iterate", "run or resume the bootstrapping plan");
  it->add_option("--plan", ia.plan)->required();
  it->add_option("--state", ia.state)->required();
  it->add_option("--services", ia.services)->required();
  it->add_option("--mock", ia.mock);
  it->add_option("--stop-after", ia.stop_after, "pool | sample | synthesize | score | influence | emit");
  it->callback([&] { rc = cmd_iterate(ia); });

  std::string state_dir;
  auto* st = app.add_subcommand("status", "print the manifest table");
  st->add_option("--state", state_dir)->required();
  st->callback([&] { rc = cmd_status(state_dir); });

  SimArgs sm;
  auto* sim = app.add_subcommand("simulate", "affine self-distillation dynamics");
  sim->add_option("--n", sm.n);
  sim->add_option("--lt", sm.lt);
  sim->add_option("--lg", sm.lg);
  sim->add_option("--steps", sm.steps);
  sim->add_option("--seed", sm.seed);
  sim->add_option("--out", sm.out);
  sim->callback([&] { rc = cmd_simulate(sm); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return rc;
}
