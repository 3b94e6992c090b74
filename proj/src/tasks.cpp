#include "metaprompt/tasks.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>

#include "metaprompt/digest.hpp"
#include "metaprompt/errors.hpp"

namespace metaprompt {

namespace {

std::vector<std::string> split(const std::string& line, const std::string& sep) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(sep, start);
    if (pos == std::string::npos) {
      fields.push_back(line.substr(start));
      return fields;
    }
    fields.push_back(line.substr(start, pos - start));
    start = pos + sep.size();
  }
}

std::int64_t parse_timestamp(const std::string& field, std::size_t line_no) {
  std::int64_t value = 0;
  const auto* end = field.data() + field.size();
  const auto [ptr, ec] = std::from_chars(field.data(), end, value);
  if (ec != std::errc() || ptr != end) {
    throw ParseError("line " + std::to_string(line_no) + ": bad timestamp '" +
                     field + "'");
  }
  if (value < 0) {
    throw ParseError("line " + std::to_string(line_no) +
                     ": negative timestamp");
  }
  return value;
}

void require_field(const std::vector<std::string>& fields, std::size_t index,
                   const char* name, std::size_t line_no) {
  if (fields.size() <= index || fields[index].empty()) {
    throw ParseError("line " + std::to_string(line_no) + ": missing " + name);
  }
}

constexpr const char* kTsvHeader = "user_id\titem_id\ttimestamp\tcontext\tdomain";

}  // namespace

InteractionFormat parse_interaction_format(const std::string& name) {
  if (name == "tsv") return InteractionFormat::kTsv;
  if (name == "movielens") return InteractionFormat::kMovieLensDat;
  if (name == "movielens-csv") return InteractionFormat::kMovieLensCsv;
  throw ConfigError("unknown interaction format '" + name +
                    "' (expected tsv, movielens or movielens-csv)");
}

std::vector<InteractionRecord> load_interactions(const std::filesystem::path& path,
                                                 InteractionFormat format) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());

  std::vector<InteractionRecord> records;
  std::string line;
  std::size_t line_no = 0;
  bool awaiting_header = format != InteractionFormat::kMovieLensDat;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (awaiting_header) {
      // TSV files may open with '#' comment lines (config digest stamps).
      if (format == InteractionFormat::kTsv && line.starts_with('#')) continue;
      if (format == InteractionFormat::kTsv && line.rfind("user_id\titem_id", 0) != 0) {
        throw ParseError("line " + std::to_string(line_no) + ": expected header '" +
                         std::string(kTsvHeader) + "'");
      }
      awaiting_header = false;
      continue;
    }
    if (line.empty()) continue;

    InteractionRecord rec;
    switch (format) {
      case InteractionFormat::kTsv: {
        const auto fields = split(line, "\t");
        require_field(fields, 0, "user_id", line_no);
        require_field(fields, 1, "item_id", line_no);
        require_field(fields, 2, "timestamp", line_no);
        if (fields.size() > 5) {
          throw ParseError("line " + std::to_string(line_no) +
                           ": too many columns");
        }
        rec.user_id = fields[0];
        rec.item_id = fields[1];
        rec.timestamp = parse_timestamp(fields[2], line_no);
        if (fields.size() > 3) rec.context = fields[3];
        if (fields.size() > 4) rec.domain = fields[4];
        break;
      }
      case InteractionFormat::kMovieLensDat:
      case InteractionFormat::kMovieLensCsv: {
        const auto fields = split(
            line, format == InteractionFormat::kMovieLensDat ? "::" : ",");
        require_field(fields, 0, "user_id", line_no);
        require_field(fields, 1, "item_id", line_no);
        require_field(fields, 3, "timestamp", line_no);
        rec.user_id = fields[0];
        rec.item_id = fields[1];
        rec.timestamp = parse_timestamp(fields[3], line_no);
        break;
      }
    }
    records.push_back(std::move(rec));
  }
  return records;
}

void save_interactions(const std::filesystem::path& path,
                       const std::vector<InteractionRecord>& records,
                       const std::string& config_digest) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  if (!config_digest.empty()) out << "# config_digest=" << config_digest << '\n';
  out << kTsvHeader << '\n';
  for (const auto& r : records) {
    out << r.user_id << '\t' << r.item_id << '\t' << r.timestamp << '\t'
        << r.context << '\t' << r.domain << '\n';
  }
}

ItemVocabulary build_item_vocabulary(const std::vector<InteractionRecord>& records) {
  std::vector<std::string> ids;
  ids.reserve(records.size());
  for (const auto& r : records) ids.push_back(r.item_id);
  return ItemVocabulary(std::move(ids));
}

Example make_example(const InteractionRecord& record, const ItemVocabulary& items) {
  Example ex;
  auto context = vocab::tokenize_context(record.context);
  if (context.size() > kMaxContextTokens) {
    context.erase(context.begin(),
                  context.end() - static_cast<long>(kMaxContextTokens));
  }
  ex.tokens = std::move(context);
  ex.tokens.push_back(vocab::kSep);
  ex.target = items.token(record.item_id);
  return ex;
}

TaskSet build_tasks(const std::vector<InteractionRecord>& records,
                    const ItemVocabulary& items, int k_support, int k_query,
                    std::uint64_t seed, bool temporal) {
  if (k_support < 1 || k_support > kMaxShots || k_query < 1 || k_query > kMaxShots) {
    throw ContractError("k_support and k_query must lie in [1, " +
                        std::to_string(kMaxShots) + "]");
  }
  std::map<std::string, std::vector<std::size_t>> by_user;
  for (std::size_t i = 0; i < records.size(); ++i) {
    by_user[records[i].user_id].push_back(i);
  }

  TaskSet result;
  result.distinct_users = by_user.size();
  const auto needed = static_cast<std::size_t>(k_support + k_query);
  for (auto& [user, rows] : by_user) {
    if (rows.size() < needed) {
      result.skipped_users.push_back(user);
      continue;
    }
    if (temporal) {
      std::stable_sort(rows.begin(), rows.end(), [&](std::size_t a, std::size_t b) {
        return records[a].timestamp < records[b].timestamp;
      });
    } else {
      // Per-user stream so a user's split does not depend on other users.
      std::mt19937_64 rng(Digest().update(user).update(seed).value());
      std::shuffle(rows.begin(), rows.end(), rng);
    }
    UserTask task;
    task.user_id = user;
    task.domain = records[rows.front()].domain;
    for (std::size_t j = 0; j < needed; ++j) {
      auto ex = make_example(records[rows[j]], items);
      if (j < static_cast<std::size_t>(k_support)) {
        task.support.push_back(std::move(ex));
      } else {
        task.query.push_back(std::move(ex));
      }
    }
    result.tasks.push_back(std::move(task));
  }
  return result;
}

double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

EpisodeBatch sample_episode(const std::vector<UserTask>& tasks,
                            std::size_t batch_size, std::mt19937_64& rng,
                            const DomainWeights* domain_weights) {
  if (batch_size > tasks.size()) {
    throw ContractError("batch size " + std::to_string(batch_size) +
                        " exceeds " + std::to_string(tasks.size()) + " tasks");
  }
  EpisodeBatch batch;
  batch.episode_seed = rng();

  if (domain_weights == nullptr) {
    std::vector<std::size_t> pool(tasks.size());
    for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = i;
    for (std::size_t i = 0; i < batch_size; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
      std::swap(pool[i], pool[pick(rng)]);
      batch.task_indices.push_back(pool[i]);
    }
  } else {
    std::map<std::string, std::vector<std::size_t>> by_domain;
    for (std::size_t i = 0; i < tasks.size(); ++i) {
      by_domain[tasks[i].domain].push_back(i);
    }
    for (const auto& [domain, weight] : *domain_weights) {
      if (!by_domain.contains(domain)) {
        batch.warnings.push_back("weight for absent domain '" + domain +
                                 "' ignored");
      }
      if (weight < 0.0) throw ConfigError("domain weights must be non-negative");
    }
    auto weight_of = [&](const std::string& domain) {
      const auto it = domain_weights->find(domain);
      return it == domain_weights->end() ? 1.0 : it->second;
    };
    for (std::size_t n = 0; n < batch_size; ++n) {
      double total = 0.0;
      for (const auto& [domain, pool] : by_domain) {
        if (!pool.empty()) total += weight_of(domain);
      }
      if (total <= 0.0) {
        throw ContractError("domain weights leave no tasks to sample");
      }
      double u = uniform01(rng) * total;
      auto chosen = by_domain.end();
      for (auto it = by_domain.begin(); it != by_domain.end(); ++it) {
        if (it->second.empty() || weight_of(it->first) <= 0.0) continue;
        chosen = it;
        u -= weight_of(it->first);
        if (u < 0.0) break;
      }
      auto& pool = chosen->second;
      std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
      const std::size_t k = pick(rng);
      batch.task_indices.push_back(pool[k]);
      pool.erase(pool.begin() + static_cast<long>(k));
    }
  }
  batch.tasks.reserve(batch_size);
  for (std::size_t idx : batch.task_indices) batch.tasks.push_back(tasks[idx]);
  return batch;
}

void SynthConfig::validate() const {
  if (n_clusters <= 0 || users_per_cluster <= 0 || items_per_cluster <= 0 ||
      interactions_per_user <= 0) {
    throw ConfigError("synthetic generator parameters must be positive");
  }
  if (!(noise >= 0.0 && noise < 1.0)) {
    throw ConfigError("noise must lie in [0, 1)");
  }
}

namespace {

int digits(int n) {
  int d = 1;
  while (n >= 10) {
    n /= 10;
    ++d;
  }
  return d;
}

std::string padded(int value, int width) {
  std::string s = std::to_string(value);
  if (static_cast<int>(s.size()) < width) s.insert(0, width - s.size(), '0');
  return s;
}

constexpr const char* kContexts[] = {
    "recommend something",      "what should i watch next",
    "suggest something new",    "show me another item",
    "something similar please", "i want more",
};

}  // namespace

std::string synth_item_id(const SynthConfig& config, int cluster, int item) {
  return "c" + padded(cluster, digits(config.n_clusters - 1)) + "_i" +
         padded(item, digits(config.items_per_cluster - 1));
}

std::string synth_domain(int cluster) { return "cluster_" + std::to_string(cluster); }

std::vector<InteractionRecord> synth_generate(const SynthConfig& config) {
  config.validate();
  std::mt19937_64 rng(config.seed);
  const int total_items = config.n_clusters * config.items_per_cluster;
  const int user_width = digits(config.users_per_cluster - 1);
  std::vector<InteractionRecord> records;
  records.reserve(static_cast<std::size_t>(config.n_clusters) *
                  config.users_per_cluster * config.interactions_per_user);
  std::int64_t user_index = 0;
  for (int c = 0; c < config.n_clusters; ++c) {
    for (int u = 0; u < config.users_per_cluster; ++u, ++user_index) {
      const std::string user = "u" + padded(c, digits(config.n_clusters - 1)) +
                               "_" + padded(u, user_width);
      for (int k = 0; k < config.interactions_per_user; ++k) {
        int cluster = c;
        int item = 0;
        if (uniform01(rng) < config.noise) {
          std::uniform_int_distribution<int> any(0, total_items - 1);
          const int flat = any(rng);
          cluster = flat / config.items_per_cluster;
          item = flat % config.items_per_cluster;
        } else {
          std::uniform_int_distribution<int> within(0, config.items_per_cluster - 1);
          item = within(rng);
        }
        std::uniform_int_distribution<std::size_t> ctx(0, std::size(kContexts) - 1);
        InteractionRecord rec;
        rec.user_id = user;
        rec.item_id = synth_item_id(config, cluster, item);
        rec.timestamp = 1'000'000 + user_index * 100'000 + k * 60;
        rec.context = kContexts[ctx(rng)];
        rec.domain = synth_domain(c);
        records.push_back(std::move(rec));
      }
    }
  }
  return records;
}

UserSplit split_users(const std::vector<UserTask>& tasks, double holdout_fraction,
                      std::uint64_t seed) {
  if (!(holdout_fraction >= 0.0 && holdout_fraction <= 1.0)) {
    throw ConfigError("holdout fraction must lie in [0, 1]");
  }
  std::map<std::string, std::vector<std::size_t>> by_domain;
  for (std::size_t i = 0; i < tasks.size(); ++i) by_domain[tasks[i].domain].push_back(i);

  std::mt19937_64 rng(seed);
  std::vector<bool> held(tasks.size(), false);
  for (auto& [domain, idx] : by_domain) {
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto n = static_cast<std::size_t>(
        std::llround(holdout_fraction * static_cast<double>(idx.size())));
    for (std::size_t i = 0; i < n; ++i) held[idx[i]] = true;
  }
  UserSplit split;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    (held[i] ? split.test : split.train).push_back(tasks[i]);
  }
  return split;
}

}  // namespace metaprompt
