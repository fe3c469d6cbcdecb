#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "psnrlab/errors.hpp"

namespace psnrlab {

/// Flat key=value experiment config. Lines starting with '#' and blank lines
/// are ignored. Known keys: backbone, residual, depths, seeds, dataset,
/// split.policy, split.missing, hyper.lr, hyper.dropout, hyper.weight_decay,
/// hyper.hidden, hyper.max_epochs, hyper.patience, hyper.eval_draws.
class ExperimentConfig {
 public:
  ExperimentConfig() = default;

  static ExperimentConfig load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw MalformedInputError("cannot open config: " + path);
    ExperimentConfig cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      auto trim = [](std::string s) {
        auto b = s.find_first_not_of(" \t\r");
        auto e = s.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
      };
      std::string t = trim(line);
      if (t.empty() || t[0] == '#') continue;
      auto eq = t.find('=');
      if (eq == std::string::npos)
        throw MalformedInputError(path + ":" + std::to_string(lineno) +
                                  ": expected key=value");
      cfg.values_[trim(t.substr(0, eq))] = trim(t.substr(eq + 1));
    }
    return cfg;
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  std::string get(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  double get_double(const std::string& key, double fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : std::stod(it->second);
  }

  int get_int(const std::string& key, int fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : std::stoi(it->second);
  }

  bool get_bool(const std::string& key, bool fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    return it->second == "true" || it->second == "1" || it->second == "yes";
  }

  template <typename T>
  std::vector<T> get_list(const std::string& key, const std::vector<T>& fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    std::vector<T> out;
    std::stringstream ss(it->second);
    std::string cell;
    while (std::getline(ss, cell, ','))
      out.push_back(static_cast<T>(std::stoll(cell)));
    return out;
  }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace psnrlab
