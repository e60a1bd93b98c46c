#ifndef DDRACE_DATA_HPP
#define DDRACE_DATA_HPP

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ddrace/errors.hpp"

namespace ddrace {

// One categorization trial. Categories, blocks and subjects are 1-based on
// the wire and 0-based here.
struct TrialRecord {
  int subject = 0;
  int block = 0;
  int trial = 1;  // within-block trial index, kept as read
  int stimulus = 0;
  int response = 0;
  double rt = 0.0;
};

struct CsvSchema {
  std::string subject = "subject";
  std::string block = "block";
  std::string trial = "trial";
  std::string stimulus = "stimulus";
  std::string response = "response";
  std::string rt = "rt";
};

// Immutable trial collection plus the design sizes and the per-(subject,
// stimulus) minimum response times that bound the offset priors.
class Dataset {
 public:
  static Dataset from_records(std::vector<TrialRecord> records,
                              std::optional<int> d0_override = std::nullopt) {
    Dataset ds;
    ds.records_ = std::move(records);
    if (ds.records_.empty()) throw DataError("dataset has no trials");
    int n = 0, T = 0, L = 0, d0 = d0_override.value_or(0);
    for (const auto& r : ds.records_) {
      n = std::max(n, r.subject + 1);
      T = std::max(T, r.block + 1);
      L = std::max(L, r.trial);
      d0 = std::max({d0, r.stimulus + 1, r.response + 1});
    }
    ds.n_ = n;
    ds.T_ = T;
    ds.L_ = L;
    ds.d0_ = d0;
    if (ds.d0_ < 2) throw DataError("need at least 2 categories, got " + std::to_string(ds.d0_));
    ds.build_index();
    return ds;
  }

  int n_subjects() const { return n_; }
  int n_blocks() const { return T_; }
  int trials_per_block() const { return L_; }
  int n_categories() const { return d0_; }
  const std::vector<TrialRecord>& records() const { return records_; }

  // delta_{s,i,max}: minimum response time over trials of (subject, stimulus).
  double min_rt(int subject, int stimulus) const {
    const double v = min_rt_[idx(subject, stimulus)];
    if (!(v < std::numeric_limits<double>::infinity())) {
      throw DataError("no trials for subject " + std::to_string(subject + 1) +
                      ", stimulus " + std::to_string(stimulus + 1));
    }
    return v;
  }

  // Record indices grouped by (stimulus, block) and by subject.
  const std::vector<int>& trials_for(int stimulus, int block) const {
    return by_stim_block_[static_cast<std::size_t>(stimulus) * T_ + block];
  }
  const std::vector<int>& trials_for_subject(int subject) const {
    return by_subject_[subject];
  }
  const std::vector<int>& trials_for_subject_stim(int subject, int stimulus) const {
    return by_subject_stim_[idx(subject, stimulus)];
  }

 private:
  std::size_t idx(int subject, int stimulus) const {
    return static_cast<std::size_t>(subject) * d0_ + stimulus;
  }

  void build_index() {
    min_rt_.assign(static_cast<std::size_t>(n_) * d0_,
                   std::numeric_limits<double>::infinity());
    by_stim_block_.assign(static_cast<std::size_t>(d0_) * T_, {});
    by_subject_.assign(n_, {});
    by_subject_stim_.assign(static_cast<std::size_t>(n_) * d0_, {});
    for (int i = 0; i < static_cast<int>(records_.size()); ++i) {
      const auto& r = records_[i];
      auto& m = min_rt_[idx(r.subject, r.stimulus)];
      m = std::min(m, r.rt);
      by_stim_block_[static_cast<std::size_t>(r.stimulus) * T_ + r.block].push_back(i);
      by_subject_[r.subject].push_back(i);
      by_subject_stim_[idx(r.subject, r.stimulus)].push_back(i);
    }
    // The offset prior Unif(0, min rt) is undefined for an empty cell.
    for (int i = 0; i < n_; ++i) {
      for (int s = 0; s < d0_; ++s) {
        if (by_subject_stim_[idx(i, s)].empty()) {
          throw DataError("subject " + std::to_string(i + 1) +
                          " has no trials under stimulus " + std::to_string(s + 1) +
                          "; the offset prior is undefined for this pair");
        }
      }
    }
  }

  std::vector<TrialRecord> records_;
  int n_ = 0, T_ = 0, L_ = 0, d0_ = 0;
  std::vector<double> min_rt_;
  std::vector<std::vector<int>> by_stim_block_;
  std::vector<std::vector<int>> by_subject_;
  std::vector<std::vector<int>> by_subject_stim_;
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) {
    // trim surrounding whitespace
    const auto b = field.find_first_not_of(" \t\r");
    const auto e = field.find_last_not_of(" \t\r");
    out.push_back(b == std::string::npos ? "" : field.substr(b, e - b + 1));
  }
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

inline long parse_int_field(const std::string& s, const char* what, int row) {
  try {
    std::size_t pos = 0;
    const long v = std::stol(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw DataError(std::string("malformed ") + what + " at row " + std::to_string(row) +
                    ": '" + s + "'");
  }
}

inline double parse_double_field(const std::string& s, const char* what, int row) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw DataError(std::string("malformed ") + what + " at row " + std::to_string(row) +
                    ": '" + s + "'");
  }
}

}  // namespace detail

// Reads a delimited text file with a header row. Row numbers in error
// messages count the header as row 1.
inline Dataset load_dataset(const std::string& path, const CsvSchema& schema = {}) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset file: " + path);
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty dataset file: " + path);
  const auto header = detail::split_csv_line(line);
  std::map<std::string, int> col;
  for (int i = 0; i < static_cast<int>(header.size()); ++i) col[header[i]] = i;
  auto need = [&](const std::string& name) {
    auto it = col.find(name);
    if (it == col.end()) throw DataError("missing column '" + name + "' in " + path);
    return it->second;
  };
  const int c_subj = need(schema.subject), c_block = need(schema.block),
            c_trial = need(schema.trial), c_stim = need(schema.stimulus),
            c_resp = need(schema.response), c_rt = need(schema.rt);

  std::vector<TrialRecord> records;
  int row = 1;
  int max_cat = 0;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty() || line == "\r") continue;
    const auto f = detail::split_csv_line(line);
    const int width = static_cast<int>(f.size());
    const int needed = std::max({c_subj, c_block, c_trial, c_stim, c_resp, c_rt});
    if (width <= needed) {
      throw DataError("malformed row " + std::to_string(row) + ": expected at least " +
                      std::to_string(needed + 1) + " fields, got " + std::to_string(width));
    }
    TrialRecord r;
    const long subj = detail::parse_int_field(f[c_subj], "subject", row);
    const long block = detail::parse_int_field(f[c_block], "block", row);
    const long trial = detail::parse_int_field(f[c_trial], "trial", row);
    const long stim = detail::parse_int_field(f[c_stim], "stimulus", row);
    const long resp = detail::parse_int_field(f[c_resp], "response", row);
    r.rt = detail::parse_double_field(f[c_rt], "rt", row);
    if (subj < 1) throw DataError("subject id must be >= 1 at row " + std::to_string(row));
    if (block < 1) throw DataError("block must be >= 1 at row " + std::to_string(row));
    if (trial < 1) throw DataError("trial must be >= 1 at row " + std::to_string(row));
    if (stim < 1 || resp < 1) {
      throw DataError("category out of range at row " + std::to_string(row));
    }
    if (!(r.rt > 0.0)) {
      throw DataError("nonpositive response time at row " + std::to_string(row));
    }
    r.subject = static_cast<int>(subj) - 1;
    r.block = static_cast<int>(block) - 1;
    r.trial = static_cast<int>(trial);
    r.stimulus = static_cast<int>(stim) - 1;
    r.response = static_cast<int>(resp) - 1;
    max_cat = std::max({max_cat, r.stimulus + 1, r.response + 1});
    records.push_back(r);
  }
  return Dataset::from_records(std::move(records));
}

inline void save_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write dataset file: " + path);
  out << "subject,block,trial,stimulus,response,rt\n";
  char buf[64];
  for (const auto& r : ds.records()) {
    std::snprintf(buf, sizeof buf, "%.17g", r.rt);
    out << (r.subject + 1) << ',' << (r.block + 1) << ',' << r.trial << ','
        << (r.stimulus + 1) << ',' << (r.response + 1) << ',' << buf << '\n';
  }
}

// MCMC run configuration. K is not set directly: the knot rule ties the
// basis size to the number of blocks (K = T + 1).
struct ModelConfig {
  int z_max = 8;
  int hamming_radius = 1;
  int iterations = 5000;
  int burn_in = 2000;
  int thin = 5;
  int batch_size = 50;
  double target_accept = 0.44;
  double a_alpha = 1.0;
  double b_alpha = 1.0;
  double balancing_power = 0.5;  // exponent of g in the locally informed proposal
  std::uint64_t seed = 1;
  int threads = 1;
  int checkpoint_every = 500;
  int grid_per_block = 10;

  void validate() const {
    if (iterations < 1) throw DataError("iterations must be >= 1");
    if (burn_in < 0 || burn_in >= iterations) throw DataError("need 0 <= burn_in < iterations");
    if (thin < 1) throw DataError("thin must be >= 1");
    if (z_max < 1) throw DataError("z_max must be >= 1");
    if (hamming_radius < 0) throw DataError("hamming radius must be >= 0");
    if (batch_size < 1) throw DataError("batch size must be >= 1");
    if (!(target_accept > 0.0 && target_accept < 1.0)) {
      throw DataError("target acceptance must be in (0,1)");
    }
    if (threads < 1) throw DataError("threads must be >= 1");
  }
};

// Flat key=value config file; '#' starts a comment.
inline ModelConfig load_model_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config file: " + path);
  ModelConfig cfg;
  std::string line;
  int row = 0;
  while (std::getline(in, line)) {
    ++row;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      if (line.find_first_not_of(" \t\r") != std::string::npos) {
        throw DataError("bad config line " + std::to_string(row) + " in " + path);
      }
      continue;
    }
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    try {
      if (key == "z_max") cfg.z_max = std::stoi(val);
      else if (key == "hamming_radius") cfg.hamming_radius = std::stoi(val);
      else if (key == "iterations") cfg.iterations = std::stoi(val);
      else if (key == "burn_in") cfg.burn_in = std::stoi(val);
      else if (key == "thin") cfg.thin = std::stoi(val);
      else if (key == "batch_size") cfg.batch_size = std::stoi(val);
      else if (key == "target_accept") cfg.target_accept = std::stod(val);
      else if (key == "a_alpha") cfg.a_alpha = std::stod(val);
      else if (key == "b_alpha") cfg.b_alpha = std::stod(val);
      else if (key == "balancing_power") cfg.balancing_power = std::stod(val);
      else if (key == "seed") cfg.seed = std::stoull(val);
      else if (key == "threads") cfg.threads = std::stoi(val);
      else if (key == "checkpoint_every") cfg.checkpoint_every = std::stoi(val);
      else if (key == "grid_per_block") cfg.grid_per_block = std::stoi(val);
      else throw DataError("unknown config key '" + key + "' in " + path);
    } catch (const DataError&) {
      throw;
    } catch (const std::exception&) {
      throw DataError("bad value for '" + key + "' in " + path);
    }
  }
  return cfg;
}

}  // namespace ddrace

#endif
