#pragma once

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "odelab/attacks/report.hpp"
#include "odelab/cli/artifacts.hpp"
#include "odelab/netcore/errors.hpp"

namespace odelab::cli {

struct SummaryRow {
  std::string model;
  std::string attack;
  std::string gradient;
  double eps = 0.0;
  double clean_accuracy = 0.0;
  double adversarial_accuracy = 0.0;
  std::string source;
};

struct SweepSummaryRow {
  std::string source;
  double h = 0.0;
  double eps = 0.0;
  double clean_accuracy = 0.0;
  double adversarial_accuracy = 0.0;
  bool converged = false;
};

struct ResultsSummary {
  std::vector<SummaryRow> attacks;
  std::vector<SweepSummaryRow> sweeps;
};

namespace detail {

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(line);
  while (std::getline(in, cur, ',')) out.push_back(cur);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline double csv_number(const std::string& s, const std::string& file, std::size_t line) {
  double v = 0.0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || p != s.data() + s.size()) {
    throw IoError("corrupt CSV " + file + " at line " + std::to_string(line) + ": expected a number, got '" + s + "'");
  }
  return v;
}

}  // namespace detail

/// Merges the aggregate rows of every attack CSV and the rows of every sweep
/// CSV in `dir`, visiting files in name order. Other CSVs are ignored.
inline ResultsSummary summarize_results(const std::filesystem::path& dir) {
  std::error_code ec;
  if (!std::filesystem::is_directory(dir, ec)) throw IoError("results directory " + dir.string() + " not found");
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.path().extension() == ".csv") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  ResultsSummary out;
  for (const std::filesystem::path& path : files) {
    const std::string file = path.string();
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + file);
    std::string line, header;
    std::size_t n = 0, header_line = 0;
    std::vector<std::string> body;
    std::vector<std::size_t> body_lines;
    while (std::getline(in, line)) {
      ++n;
      if (!line.empty() && line[0] == '#') continue;
      if (header_line == 0) {
        header = line;
        header_line = n;
      } else if (!line.empty()) {
        body.push_back(line);
        body_lines.push_back(n);
      }
    }
    if (in.bad()) throw IoError("read error in " + file);
    const std::string name = path.filename().string();
    if (header == kAttackCsvHeader) {
      bool aggregate = false;
      for (std::size_t i = 0; i < body.size(); ++i) {
        const std::vector<std::string> f = detail::split_csv(body[i]);
        if (f.size() != 13) {
          throw IoError("corrupt CSV " + file + " at line " + std::to_string(body_lines[i]) + ": expected 13 fields");
        }
        const double eps = detail::csv_number(f[3], file, body_lines[i]);
        if (f[4] != "aggregate") {
          detail::csv_number(f[4], file, body_lines[i]);
          continue;
        }
        aggregate = true;
        out.attacks.push_back({f[0], f[1], f[2], eps, detail::csv_number(f[11], file, body_lines[i]),
                               detail::csv_number(f[12], file, body_lines[i]), name});
      }
      if (!aggregate) throw IoError("corrupt CSV " + file + ": no aggregate row");
    } else if (header.rfind("h,clean_acc", 0) == 0) {
      const std::vector<std::string> cols = detail::split_csv(header);
      std::vector<double> eps;
      for (std::size_t c = 2; c + 2 < cols.size(); ++c) {
        if (cols[c].rfind("adv_acc@", 0) != 0) throw IoError("corrupt CSV " + file + ": bad sweep header");
        eps.push_back(detail::csv_number(cols[c].substr(8), file, header_line));
      }
      for (std::size_t i = 0; i < body.size(); ++i) {
        const std::vector<std::string> f = detail::split_csv(body[i]);
        if (f.size() != cols.size()) {
          throw IoError("corrupt CSV " + file + " at line " + std::to_string(body_lines[i]) + ": wrong field count");
        }
        const double h = detail::csv_number(f[0], file, body_lines[i]);
        const double clean = detail::csv_number(f[1], file, body_lines[i]);
        for (std::size_t e = 0; e < eps.size(); ++e) {
          out.sweeps.push_back(
              {name, h, eps[e], clean, detail::csv_number(f[2 + e], file, body_lines[i]), f[2 + eps.size()] == "true"});
        }
      }
    }
  }
  for (std::size_t i = 0; i < out.attacks.size(); ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      const SummaryRow &a = out.attacks[i], &b = out.attacks[j];
      if (a.model == b.model && a.attack == b.attack && a.gradient == b.gradient && a.eps == b.eps) {
        throw FormatError("duplicate result for " + a.model + "/" + a.attack + "/" + a.gradient + " in " + b.source +
                          " and " + a.source);
      }
    }
  }
  return out;
}

inline void write_summary_csv(std::ostream& os, const ResultsSummary& s) {
  const auto old = os.precision(17);
  os << "model,attack,gradient,eps,clean_accuracy,adversarial_accuracy,source\n";
  for (const SummaryRow& r : s.attacks) {
    os << r.model << ',' << r.attack << ',' << r.gradient << ',' << r.eps << ',' << r.clean_accuracy << ','
       << r.adversarial_accuracy << ',' << r.source << '\n';
  }
  os.precision(old);
}

/// Wide plot data: x = eps, one adversarial-accuracy column per model, one
/// block of rows per (attack, gradient).
inline void write_plot_csv(std::ostream& os, const ResultsSummary& s) {
  std::vector<std::string> models;
  struct Key {
    std::string attack, gradient;
    double eps;
  };
  std::vector<Key> keys;
  for (const SummaryRow& r : s.attacks) {
    if (std::find(models.begin(), models.end(), r.model) == models.end()) models.push_back(r.model);
    const bool seen = std::any_of(keys.begin(), keys.end(), [&](const Key& k) {
      return k.attack == r.attack && k.gradient == r.gradient && k.eps == r.eps;
    });
    if (!seen) keys.push_back({r.attack, r.gradient, r.eps});
  }
  std::stable_sort(keys.begin(), keys.end(), [](const Key& a, const Key& b) {
    if (a.attack != b.attack) return a.attack < b.attack;
    if (a.gradient != b.gradient) return a.gradient < b.gradient;
    return a.eps < b.eps;
  });
  const auto old = os.precision(17);
  os << "attack,gradient,eps";
  for (const std::string& m : models) os << ',' << m;
  os << '\n';
  for (const Key& k : keys) {
    os << k.attack << ',' << k.gradient << ',' << k.eps;
    for (const std::string& m : models) {
      os << ',';
      for (const SummaryRow& r : s.attacks) {
        if (r.model == m && r.attack == k.attack && r.gradient == k.gradient && r.eps == k.eps) {
          os << r.adversarial_accuracy;
        }
      }
    }
    os << '\n';
  }
  os.precision(old);
}

inline void write_sweep_summary_csv(std::ostream& os, const ResultsSummary& s) {
  const auto old = os.precision(17);
  os << "source,h,eps,clean_accuracy,adversarial_accuracy,converged\n";
  for (const SweepSummaryRow& r : s.sweeps) {
    os << r.source << ',' << r.h << ',' << r.eps << ',' << r.clean_accuracy << ',' << r.adversarial_accuracy << ','
       << (r.converged ? "true" : "false") << '\n';
  }
  os.precision(old);
}

}  // namespace odelab::cli
