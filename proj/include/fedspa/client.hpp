#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "fedspa/data.hpp"
#include "fedspa/diffnet.hpp"
#include "fedspa/rng.hpp"

namespace fedspa {

/// What a client uploads: its full local model (not a delta) and shard size.
struct ClientUpdate {
  int client_id = -1;
  ParamVector params;
  std::size_t sample_count = 0;
};

using EpochHook = std::function<void(ParamVector&, int epoch)>;

/// Mini-batch SGD on cross-entropy. Batch order is reshuffled every epoch from `seed`.
inline ParamVector train_epochs(const NetworkSpec& spec, ParamVector params, const Dataset& shard, int epochs,
                                float lr, std::size_t batch_size, std::uint64_t seed, const std::string& who,
                                const EpochHook& on_epoch_end = {}) {
  if (shard.size() == 0) throw ArgumentError(who + ": empty shard");
  if (batch_size == 0) throw ArgumentError(who + ": batch size must be positive");
  Rng rng(seed);
  auto order = iota_indices(shard.size());
  for (int e = 0; e < epochs; ++e) {
    shuffle_in_place(order, rng);
    std::size_t batch_no = 0;
    for (std::size_t start = 0; start < order.size(); start += batch_size, ++batch_no) {
      std::size_t end = std::min(order.size(), start + batch_size);
      std::span<const std::size_t> idx(order.data() + start, end - start);
      auto batch = shard.batch(idx);
      auto [loss, grad] = loss_and_param_grads(
          spec, params, batch, CrossEntropy{},
          who + ", epoch " + std::to_string(e) + ", batch " + std::to_string(batch_no));
      params = sgd_step(std::move(params), grad, lr);
    }
    if (on_epoch_end) on_epoch_end(params, e);
  }
  return params;
}

inline ClientUpdate local_train(const NetworkSpec& spec, const ParamVector& global_params, const Dataset& shard,
                                int epochs, float lr, std::size_t batch_size, std::uint64_t client_seed,
                                int client_id = -1) {
  ClientUpdate u;
  u.client_id = client_id;
  u.sample_count = shard.size();
  u.params = train_epochs(spec, global_params, shard, epochs, lr, batch_size, client_seed,
                          "client " + std::to_string(client_id));
  return u;
}

inline ParamVector delta_of(const ParamVector& params, const ParamVector& global) {
  if (params.size() != global.size()) throw ArgumentError("delta_of: layout mismatch");
  ParamVector d(params.size());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = params[i] - global[i];
  return d;
}

}  // namespace fedspa
