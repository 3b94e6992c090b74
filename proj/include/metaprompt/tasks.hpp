#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "metaprompt/vocabulary.hpp"

namespace metaprompt {

struct InteractionRecord {
  std::string user_id;
  std::string item_id;
  std::int64_t timestamp = 0;
  std::string context;
  std::string domain;

  bool operator==(const InteractionRecord&) const = default;
};

enum class InteractionFormat {
  kTsv,            // user_id, item_id, timestamp, context, domain (with header)
  kMovieLensDat,   // UserID::MovieID::Rating::Timestamp
  kMovieLensCsv,   // userId,movieId,rating,timestamp (with header)
};

InteractionFormat parse_interaction_format(const std::string& name);

/// Reads interactions in file order. Malformed lines raise ParseError naming
/// the 1-based physical line number; an empty file yields no records. TSV
/// files may start with '#' comment lines ahead of the header.
std::vector<InteractionRecord> load_interactions(
    const std::filesystem::path& path,
    InteractionFormat format = InteractionFormat::kTsv);

/// Writes TSV with header; a non-empty digest goes in a leading comment.
void save_interactions(const std::filesystem::path& path,
                       const std::vector<InteractionRecord>& records,
                       const std::string& config_digest = "");

ItemVocabulary build_item_vocabulary(const std::vector<InteractionRecord>& records);

/// One (context, target item) pair, already tokenized. The final token is
/// always SEP, whose logits score the target.
struct Example {
  std::vector<int> tokens;
  int target = 0;

  bool operator==(const Example&) const = default;
};

inline constexpr std::size_t kMaxContextTokens = 8;

Example make_example(const InteractionRecord& record, const ItemVocabulary& items);

struct UserTask {
  std::string user_id;
  std::string domain;
  std::vector<Example> support;
  std::vector<Example> query;

  bool operator==(const UserTask&) const = default;
};

struct TaskSet {
  std::vector<UserTask> tasks;
  std::vector<std::string> skipped_users;
  std::size_t distinct_users = 0;
};

inline constexpr int kMaxShots = 5;

/// Splits each user's interactions into disjoint support and query sets.
/// Users with fewer than k_support + k_query interactions are skipped and
/// listed in the report. The split is a per-user seeded shuffle, or
/// earliest-first when `temporal` is set.
TaskSet build_tasks(const std::vector<InteractionRecord>& records,
                    const ItemVocabulary& items, int k_support, int k_query,
                    std::uint64_t seed, bool temporal = false);

struct EpisodeBatch {
  std::vector<UserTask> tasks;
  std::vector<std::size_t> task_indices;
  std::uint64_t episode_seed = 0;
  std::vector<std::string> warnings;
};

using DomainWeights = std::map<std::string, double>;

/// Samples batch_size distinct tasks without replacement. With domain
/// weights, each draw first picks a domain with probability proportional to
/// its weight among domains that still have tasks, then a task uniformly
/// within it. Domains without a listed weight get weight 1; weights for
/// domains with no tasks are ignored with a warning.
EpisodeBatch sample_episode(const std::vector<UserTask>& tasks,
                            std::size_t batch_size, std::mt19937_64& rng,
                            const DomainWeights* domain_weights = nullptr);

struct SynthConfig {
  int n_clusters = 4;
  int users_per_cluster = 50;
  int items_per_cluster = 32;
  int interactions_per_user = 12;
  double noise = 0.2;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Clustered cold-start data. Each user belongs to one cluster; each
/// interaction draws an item uniformly from all items with probability
/// `noise`, otherwise uniformly from the user's cluster. The cluster is the
/// domain label. Item ids sort cluster by cluster.
std::vector<InteractionRecord> synth_generate(const SynthConfig& config);

std::string synth_item_id(const SynthConfig& config, int cluster, int item);
std::string synth_domain(int cluster);

struct UserSplit {
  std::vector<UserTask> train;
  std::vector<UserTask> test;
};

/// Holds out round(fraction * n) users of every domain for evaluation.
UserSplit split_users(const std::vector<UserTask>& tasks, double holdout_fraction,
                      std::uint64_t seed);

/// Uniform double in [0, 1) from 53 random bits.
double uniform01(std::mt19937_64& rng);

}  // namespace metaprompt
