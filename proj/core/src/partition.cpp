#include "ktpfl/partition.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "ktpfl/errors.hpp"
#include "ktpfl/rng.hpp"

namespace ktpfl {

namespace {

std::vector<std::size_t> iota_indices(std::size_t n) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return idx;
}

// Reserve `hold` indices for the public pool; returns {public, remaining}.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_holdout(
    std::size_t total, std::size_t hold, std::uint64_t seed) {
  if (hold > total) {
    throw ConfigError("public hold-out of " + std::to_string(hold) + " exceeds dataset size " +
                      std::to_string(total));
  }
  auto idx = iota_indices(total);
  auto rng = make_rng(seed, Stream::kPublicHoldout);
  shuffle_vector(idx, rng);
  std::vector<std::size_t> pub(idx.begin(), idx.begin() + hold);
  std::vector<std::size_t> rest(idx.begin() + hold, idx.end());
  std::sort(pub.begin(), pub.end());
  std::sort(rest.begin(), rest.end());
  return {std::move(pub), std::move(rest)};
}

std::vector<std::vector<std::size_t>> label_buckets(const Dataset& ds,
                                                    const std::vector<std::size_t>& pool,
                                                    std::mt19937_64& rng) {
  std::vector<std::vector<std::size_t>> buckets(ds.num_classes);
  for (std::size_t idx : pool) buckets[static_cast<std::size_t>(ds.labels[idx])].push_back(idx);
  for (auto& bucket : buckets) shuffle_vector(bucket, rng);
  return buckets;
}

// Deal num_clients*k label slots from repeated shuffled decks, then repair
// within-client duplicates by swapping with other clients' slots.
std::vector<int> deal_label_slots(int num_clients, int k, int num_classes,
                                  std::uint64_t seed) {
  const int total_slots = num_clients * k;
  for (std::uint64_t attempt = 0; attempt < 20; ++attempt) {
    auto rng = make_rng(seed, Stream::kPartitionShards, {attempt});
    std::vector<int> deck;
    while (static_cast<int>(deck.size()) < total_slots) {
      std::vector<int> perm(num_classes);
      std::iota(perm.begin(), perm.end(), 0);
      shuffle_vector(perm, rng);
      deck.insert(deck.end(), perm.begin(), perm.end());
    }
    std::vector<int> slots(deck.begin(), deck.begin() + total_slots);

    auto client_has = [&](int client, int label, int skip_slot) {
      for (int i = client * k; i < (client + 1) * k; ++i) {
        if (i != skip_slot && slots[i] == label) return true;
      }
      return false;
    };

    bool ok = true;
    for (int guard = 0; guard < 4 * total_slots; ++guard) {
      int dup_slot = -1;
      for (int s = 0; s < total_slots && dup_slot < 0; ++s) {
        if (client_has(s / k, slots[s], s)) dup_slot = s;
      }
      if (dup_slot < 0) break;
      const int client = dup_slot / k;
      bool swapped = false;
      for (int j = 0; j < total_slots && !swapped; ++j) {
        const int other = j / k;
        if (other == client) continue;
        if (slots[j] == slots[dup_slot]) continue;
        if (client_has(client, slots[j], dup_slot)) continue;
        if (client_has(other, slots[dup_slot], j)) continue;
        std::swap(slots[dup_slot], slots[j]);
        swapped = true;
      }
      if (!swapped) {
        ok = false;
        break;
      }
    }
    if (!ok) continue;
    bool clean = true;
    for (int s = 0; s < total_slots && clean; ++s) {
      if (client_has(s / k, slots[s], s)) clean = false;
    }
    if (clean) return slots;
  }
  throw ConfigError("label_skew: could not deal " + std::to_string(k) +
                    " distinct labels to each of " + std::to_string(num_clients) + " clients");
}

// Append a shuffled chunk as 75% train / 25% test.
void split_chunk(std::span<const std::size_t> chunk, std::vector<std::size_t>& train,
                 std::vector<std::size_t>& test) {
  const std::size_t n_test = chunk.size() / 4;
  const std::size_t n_train = chunk.size() - n_test;
  train.insert(train.end(), chunk.begin(), chunk.begin() + n_train);
  test.insert(test.end(), chunk.begin() + n_train, chunk.end());
}

// Largest-remainder apportionment of `total` items over normalized weights.
std::vector<std::size_t> apportion(const std::vector<double>& weights, std::size_t total) {
  const std::size_t n = weights.size();
  std::vector<std::size_t> counts(n, 0);
  std::vector<std::pair<double, std::size_t>> fracs(n);
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double target = weights[i] * static_cast<double>(total);
    counts[i] = static_cast<std::size_t>(std::floor(target));
    assigned += counts[i];
    fracs[i] = {target - std::floor(target), i};
  }
  std::stable_sort(fracs.begin(), fracs.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  for (std::size_t r = 0; assigned < total; ++r, ++assigned) {
    counts[fracs[r % n].second] += 1;
  }
  return counts;
}

void finalize_shards(Partition& part) {
  for (std::size_t n = 0; n < part.num_clients(); ++n) {
    auto& train = part.private_shards[n];
    auto& test = part.test_shards[n];
    if (test.empty() && train.size() >= 2) {
      test.push_back(train.back());
      train.pop_back();
    }
    if (train.empty()) {
      throw ConfigError("client " + std::to_string(n) + " received no training samples");
    }
    std::sort(train.begin(), train.end());
    std::sort(test.begin(), test.end());
  }
}

void check_labeled(const Dataset& ds, const char* who) {
  if (!ds.has_labels()) throw DataError(std::string(who) + ": dataset has no labels");
  if (ds.num_classes < 1) throw DataError(std::string(who) + ": dataset has no classes");
}

}  // namespace

std::size_t Partition::total_private() const {
  std::size_t total = 0;
  for (const auto& shard : private_shards) total += shard.size();
  return total;
}

Partition partition_label_skew(const Dataset& ds, int num_clients, int labels_per_client,
                               std::uint64_t seed, std::size_t public_hold_out) {
  check_labeled(ds, "partition_label_skew");
  if (num_clients < 1) throw ConfigError("label_skew: need at least one client");
  if (labels_per_client < 1 || labels_per_client > ds.num_classes) {
    throw ConfigError("label_skew: labels_per_client " + std::to_string(labels_per_client) +
                      " outside [1, " + std::to_string(ds.num_classes) + "]");
  }

  Partition part;
  auto [pub, pool] = split_holdout(ds.size(), public_hold_out, seed);
  part.public_indices = std::move(pub);
  part.private_shards.assign(num_clients, {});
  part.test_shards.assign(num_clients, {});

  auto rng = make_rng(seed, Stream::kPartitionShards, {0xb0c});
  auto buckets = label_buckets(ds, pool, rng);
  auto slots = deal_label_slots(num_clients, labels_per_client, ds.num_classes, seed);

  std::vector<std::vector<int>> owners(ds.num_classes);
  for (int n = 0; n < num_clients; ++n) {
    for (int i = 0; i < labels_per_client; ++i) {
      owners[static_cast<std::size_t>(slots[n * labels_per_client + i])].push_back(n);
    }
  }

  for (int label = 0; label < ds.num_classes; ++label) {
    const auto& who = owners[label];
    if (who.empty()) continue;
    const auto& bucket = buckets[label];
    if (bucket.size() < who.size()) {
      throw ConfigError("label_skew: label " + std::to_string(label) + " has only " +
                        std::to_string(bucket.size()) + " samples for " +
                        std::to_string(who.size()) + " clients");
    }
    const std::size_t base = bucket.size() / who.size();
    const std::size_t extra = bucket.size() % who.size();
    std::size_t offset = 0;
    for (std::size_t i = 0; i < who.size(); ++i) {
      const std::size_t take = base + (i < extra ? 1 : 0);
      split_chunk({bucket.data() + offset, take}, part.private_shards[who[i]],
                  part.test_shards[who[i]]);
      offset += take;
    }
  }

  finalize_shards(part);
  return part;
}

Partition partition_dirichlet(const Dataset& ds, int num_clients, double alpha,
                              std::uint64_t seed, std::size_t public_hold_out) {
  check_labeled(ds, "partition_dirichlet");
  if (num_clients < 1) throw ConfigError("dirichlet: need at least one client");
  if (!(alpha > 0.0)) throw ParameterError("dirichlet: alpha must be > 0");

  Partition part;
  auto [pub, pool] = split_holdout(ds.size(), public_hold_out, seed);
  part.public_indices = std::move(pub);
  part.private_shards.assign(num_clients, {});
  part.test_shards.assign(num_clients, {});

  auto rng = make_rng(seed, Stream::kPartitionShards, {0xd17});
  auto buckets = label_buckets(ds, pool, rng);

  for (int label = 0; label < ds.num_classes; ++label) {
    const auto& bucket = buckets[label];
    if (bucket.empty()) continue;
    std::vector<double> weights(num_clients);
    double total = 0.0;
    for (int n = 0; n < num_clients; ++n) {
      weights[n] = gamma_sample(rng, alpha);
      total += weights[n];
    }
    for (double& w : weights) w /= total;
    auto counts = apportion(weights, bucket.size());

    // Floor at one sample per client when the class is large enough.
    for (int n = 0; n < num_clients; ++n) {
      if (counts[n] > 0) continue;
      std::size_t donor = 0;
      for (std::size_t m = 1; m < counts.size(); ++m) {
        if (counts[m] > counts[donor]) donor = m;
      }
      if (counts[donor] < 2) break;
      counts[donor] -= 1;
      counts[n] += 1;
    }

    std::size_t offset = 0;
    for (int n = 0; n < num_clients; ++n) {
      split_chunk({bucket.data() + offset, counts[n]}, part.private_shards[n],
                  part.test_shards[n]);
      offset += counts[n];
    }
  }

  finalize_shards(part);
  return part;
}

Dataset carve_public(const Dataset& source, std::size_t size, bool labeled,
                     std::uint64_t seed) {
  if (size > source.size()) {
    throw ConfigError("carve_public: requested " + std::to_string(size) + " of " +
                      std::to_string(source.size()) + " samples");
  }
  if (size == 0) {
    std::fprintf(stderr, "warning: public data size is 0; distillation will be a no-op\n");
  }
  auto idx = iota_indices(source.size());
  auto rng = make_rng(seed, Stream::kCarvePublic);
  shuffle_vector(idx, rng);
  idx.resize(size);
  Dataset out = gather_dataset(source, idx);
  if (!labeled) out.labels.clear();
  return out;
}

std::vector<std::vector<std::size_t>> batches(const std::vector<std::size_t>& indices,
                                              std::size_t batch_size, std::uint64_t seed,
                                              std::uint64_t epoch) {
  if (batch_size < 1) throw ParameterError("batches: batch_size must be >= 1");
  std::vector<std::size_t> order = indices;
  std::mt19937_64 rng(mix_seed(seed, {epoch}));
  shuffle_vector(order, rng);
  std::vector<std::vector<std::size_t>> slices;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(start + batch_size, order.size());
    slices.emplace_back(order.begin() + start, order.begin() + end);
  }
  return slices;
}

}  // namespace ktpfl
