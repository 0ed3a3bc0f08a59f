#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "meps/model/network.hpp"
#include "meps/numcore/optim.hpp"
#include "meps/numcore/rng.hpp"

namespace meps::model {

struct EpochLog {
  std::size_t epoch = 0;
  double lr = 0.0;
  double loss = 0.0;            // mean over shapes of per-vertex cross-entropy
  double train_accuracy = 0.0;  // argmax accuracy over all training vertices, pre-update
};

struct TrainResult {
  Model best;   // parameters after the epoch with the lowest running training loss
  Model last;   // parameters after the final epoch
  std::size_t best_epoch = 0;
  std::vector<EpochLog> log;
};

struct TrainOptions {
  std::size_t threads = 1;  // workers computing per-shape gradients inside a batch
  std::function<void(const EpochLog&)> on_epoch;
};

namespace detail {

struct ShapeGrad {
  std::vector<std::vector<double>> grads;  // aligned with params().entries()
  double loss = 0.0;
  std::size_t correct = 0;
};

inline ShapeGrad shape_gradient(Model& replica, const ShapeInput& in, double weight) {
  auto logits = forward_model(replica, in);
  auto loss = num::cross_entropy(logits, in.labels);
  ShapeGrad out;
  out.loss = loss.item();
  const auto pred = num::argmax_rows(logits);
  for (std::size_t i = 0; i < pred.size(); ++i) out.correct += pred[i] == in.labels[i];
  num::backward(num::scale(loss, weight));
  for (auto& e : replica.params().entries()) {
    auto g = e.tensor.grad();
    if (g.empty()) {
      out.grads.emplace_back(e.tensor.numel(), 0.0);
    } else {
      out.grads.emplace_back(g.begin(), g.end());
    }
  }
  replica.params().clear_grads();
  return out;
}

}  // namespace detail

/// Minibatch training over whole shapes. Each batch's gradient is the mean
/// over its shapes of the per-vertex mean cross-entropy gradient; per-shape
/// gradients are summed in batch order, so results do not depend on the
/// number of threads.
inline TrainResult train(const NetworkConfig& cfg, const TrainSchedule& schedule, const std::vector<geo::Mesh>& dataset,
                         const TrainOptions& options = {}) {
  cfg.validate();
  schedule.validate();
  if (dataset.empty()) throw ConfigError("train: empty dataset");
  std::vector<ShapeInput> shapes;
  for (std::size_t s = 0; s < dataset.size(); ++s) {
    if (!dataset[s].labels) throw ConfigError("train: shape " + std::to_string(s) + " has no labels");
    shapes.push_back(prepare_shape(cfg, dataset[s]));
  }
  std::size_t total_vertices = 0;
  for (const auto& s : shapes) total_vertices += s.labels.size();

  Model model = Model::init(cfg, schedule.seed);
  const auto workers = std::max<std::size_t>(1, std::min(options.threads, schedule.batch_size));
  std::vector<Model> replicas;
  for (std::size_t w = 0; w < workers; ++w) replicas.push_back(model.clone());

  num::OptimizerState opt;
  opt.learning_rate = schedule.lr0;
  opt.weight_decay = schedule.weight_decay;
  opt.rule = schedule.optimizer;

  num::Rng shuffler(schedule.seed, /*stream=*/0x5b0ff1e);
  std::vector<std::size_t> order(shapes.size());
  std::iota(order.begin(), order.end(), 0);

  TrainResult result{model.clone(), model.clone(), 0, {}};
  double best_loss = std::numeric_limits<double>::infinity();

  for (std::size_t epoch = 0; epoch < schedule.max_epochs; ++epoch) {
    opt.learning_rate = lr_at(schedule, epoch);
    shuffler.shuffle(std::span(order));
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += schedule.batch_size) {
      const auto end = std::min(order.size(), start + schedule.batch_size);
      const auto count = end - start;
      const double weight = 1.0 / static_cast<double>(count);
      for (auto& r : replicas) r.params().assign(model.params());

      std::vector<detail::ShapeGrad> grads(count);
      auto run = [&](std::size_t w) {
        for (std::size_t b = w; b < count; b += workers) grads[b] = detail::shape_gradient(replicas[w], shapes[order[start + b]], weight);
      };
      if (workers == 1) {
        run(0);
      } else {
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(run, w);
        for (auto& t : pool) t.join();
      }

      auto& entries = model.params().entries();
      for (std::size_t p = 0; p < entries.size(); ++p) {
        auto& g = entries[p].tensor.node()->grad_buffer();
        std::fill(g.begin(), g.end(), 0.0);
        for (const auto& sg : grads)
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += sg.grads[p][i];
      }
      for (const auto& sg : grads) {
        if (!std::isfinite(sg.loss)) {
          throw NumericError("training diverged: non-finite loss at epoch " + std::to_string(epoch) +
                             " (lr " + std::to_string(opt.learning_rate) + ")");
        }
        loss_sum += sg.loss;
        correct += sg.correct;
      }
      num::optimizer_step(model.params(), opt);
      for (const auto& e : model.params().entries())
        for (double v : e.tensor.data())
          if (!std::isfinite(v)) {
            throw NumericError("training diverged: non-finite parameter '" + e.name + "' after epoch " +
                               std::to_string(epoch));
          }
    }
    EpochLog entry{epoch, opt.learning_rate, loss_sum / static_cast<double>(shapes.size()),
                   static_cast<double>(correct) / static_cast<double>(total_vertices)};
    result.log.push_back(entry);
    if (entry.loss < best_loss) {
      best_loss = entry.loss;
      result.best_epoch = epoch;
      result.best.params().assign(model.params());
    }
    if (options.on_epoch) options.on_epoch(entry);
  }
  result.last.params().assign(model.params());
  return result;
}

}  // namespace meps::model
