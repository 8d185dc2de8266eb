// Throughput benchmark; built against the 32-bit library.
#include <chrono>
#include <iostream>

#include "CLI11.hpp"
#include "fiml/eval.hpp"
#include "fiml/rng.hpp"

using namespace fiml;

int main(int argc, char** argv) {
  CLI::App app{"fiml throughput benchmark", "fiml_bench"};
  std::size_t batches = 20, episodes = 200, threads = 0, shots = 1;
  app.add_option("--batches", batches, "Meta-training batches")->capture_default_str();
  app.add_option("--episodes", episodes, "Evaluation episodes")->capture_default_str();
  app.add_option("--shots", shots, "Support samples per class")->capture_default_str();
  app.add_option("--threads", threads, "Worker threads (0 = all cores)")->capture_default_str();
  CLI11_PARSE(app, argc, argv);

  using Clock = std::chrono::steady_clock;
  const auto family = data::TaskFamily::generate({}, 0);
  meta::ModelSpec spec;
  meta::Model model = meta::Model::create(spec, Psi::baseline(spec.embedding.locations), PsiMask::all(), 0);
  meta::MetaConfig mc;
  mc.train_shots = shots;
  meta::NesterovSgd opt(mc.momentum, mc.weight_decay);
  const auto slots = meta::param_slots(model, true);

  const auto t0 = Clock::now();
  double loss = 0;
  for (std::size_t b = 0; b < batches; ++b) {
    std::vector<data::Episode> batch;
    for (std::size_t t = 0; t < mc.tasks_per_batch; ++t) {
      batch.push_back(data::sample_episode(family, data::Split::Train, mc.ways, shots, mc.query_per_class,
                                           CounterRng::derive_key(0, {streams::kTrain, b, t})));
    }
    const auto g = meta::meta_gradient(model, batch, 10, true, threads);
    auto params = meta::flatten(model);
    opt.step(params, meta::flatten(g), slots, mc.lr);
    meta::unflatten(model, params);
    loss = g.loss;
  }
  const double train_s = std::chrono::duration<double>(Clock::now() - t0).count();

  eval::EvalProtocol p;
  p.shots = shots;
  p.episodes = episodes;
  const auto t1 = Clock::now();
  const auto report = eval::evaluate(model, family, p, threads);
  const double eval_s = std::chrono::duration<double>(Clock::now() - t1).count();

  const double tasks = static_cast<double>(batches * mc.tasks_per_batch);
  std::cout << "precision: " << (sizeof(real) == 4 ? "32-bit" : "64-bit") << '\n'
            << "meta-train: " << tasks / train_s << " tasks/s (last loss " << loss << ")\n"
            << "evaluate: " << static_cast<double>(episodes) / eval_s << " episodes/s, accuracy "
            << eval::format_accuracy(report) << '\n';
  return 0;
}
