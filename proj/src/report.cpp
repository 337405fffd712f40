#include "levymal/report.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "levymal/errors.hpp"

namespace levymal {

namespace fs = std::filesystem;

std::string format_number(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

namespace {

std::string short_number(double x) {
  if (!std::isfinite(x)) return format_number(x);
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", x);
  return buf;
}

void metadata(std::ostream& out, const RunMetadata& meta, std::optional<std::uint64_t> seed) {
  out << "# seed: " << meta.scheme_seed;
  if (seed) out << " (experiment sub-seed " << *seed << ")";
  out << "\n# git describe: " << meta.git_describe << "\n# config hash: " << meta.config_hash << "\n";
}

std::string quoted(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace

void probe_output_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create output directory " + dir.string());
  const fs::path probe = dir / ".write_probe";
  {
    std::ofstream out(probe, std::ios::trunc);
    if (!out || !(out << "probe")) throw IoError("output directory " + dir.string() + " is not writable");
  }
  fs::remove(probe, ec);
}

std::string experiment_csv(const ExperimentResult& result, const RunMetadata& meta) {
  std::ostringstream out;
  out << "# experiment: " << result.name << " (recipe " << result.recipe << ")\n";
  metadata(out, meta, result.seed);
  out << "# columns: " << result.table.description << "\n";
  for (std::size_t c = 0; c < result.table.columns.size(); ++c) {
    out << (c ? "," : "") << result.table.columns[c];
  }
  out << "\n";
  for (const auto& row : result.table.rows) {
    for (std::size_t c = 0; c < row.size(); ++c) out << (c ? "," : "") << format_number(row[c]);
    out << "\n";
  }
  return out.str();
}

std::string checks_csv(const std::vector<ExperimentResult>& results, const RunMetadata& meta) {
  std::ostringstream out;
  metadata(out, meta, std::nullopt);
  out << "# columns: one row per check; lower/target/se/z empty when not applicable, pass is 1 or 0\n";
  out << "experiment,check,rule,value,lower,tolerance,target,se,z,pass\n";
  auto opt = [](const std::optional<double>& x) { return x ? format_number(*x) : std::string(); };
  for (const auto& r : results) {
    for (const auto& c : r.checks) {
      out << r.name << "," << quoted(c.name) << "," << quoted(c.rule) << "," << format_number(c.value) << ","
          << opt(c.lower) << "," << format_number(c.tolerance) << "," << opt(c.target) << ","
          << opt(c.standard_error) << "," << opt(c.z()) << "," << (c.pass ? 1 : 0) << "\n";
    }
  }
  return out.str();
}

std::string summary_text(const std::vector<ExperimentResult>& results, const RunMetadata& meta) {
  std::ostringstream out;
  std::size_t total = 0, failed = 0;
  for (const auto& r : results) {
    for (const auto& c : r.checks) {
      ++total;
      if (!c.pass) ++failed;
    }
  }
  out << "seed " << meta.scheme_seed << ", git " << meta.git_describe << ", config " << meta.config_hash << "\n";
  out << results.size() << " experiment(s), " << total << " check(s), " << failed << " failed\n";
  for (const auto& r : results) {
    out << "\n[" << (r.pass() ? "PASS" : "FAIL") << "] " << r.name << " (" << r.recipe << ")\n";
    for (const auto& note : r.notes) out << "  note: " << note << "\n";
    for (const auto& c : r.checks) {
      out << "  " << (c.pass ? "PASS" : "FAIL") << "  " << c.name << ": value " << short_number(c.value);
      if (c.target) out << ", target " << short_number(*c.target);
      if (c.standard_error) out << ", se " << short_number(*c.standard_error);
      if (auto z = c.z(); z && c.rule == "z<=3") {
        out << ", z " << short_number(*z) << " (pass iff z <= 3)";
      } else if (c.lower) {
        out << ", required in [" << short_number(*c.lower) << ", " << short_number(c.tolerance) << "]";
      } else if (c.rule == ">=") {
        out << ", required >= " << short_number(c.tolerance);
      } else if (c.rule == "<=") {
        out << ", tolerance " << short_number(c.tolerance);
      } else {
        out << ", allowed |diff| " << short_number(c.tolerance);
      }
      out << "\n";
    }
  }
  if (failed) {
    out << "\nFailures:\n";
    for (const auto& r : results) {
      for (const auto& c : r.checks) {
        if (!c.pass) out << "  " << r.name << ": " << c.name << "\n";
      }
    }
  }
  return out.str();
}

std::string path_batch_csv(const PathBatch& batch) {
  std::ostringstream out;
  out << "# columns: path_id, grid time, X, Brownian path W, cumulative raw jump sum\n";
  out << "path_id,t,X,W,jump_sum\n";
  for (std::size_t p = 0; p < batch.size(); ++p) {
    const Path& path = batch.paths[p];
    const auto w = path.brownian_path();
    const auto j = path.jump_sum_path();
    for (std::size_t i = 0; i <= batch.grid->steps(); ++i) {
      out << p << "," << format_number(batch.grid->time(i)) << "," << format_number(path.value(i)) << ","
          << format_number(w[i]) << "," << format_number(j[i]) << "\n";
    }
  }
  return out.str();
}

std::string bsde_solution_csv(const BsdeSolution& sol) {
  std::ostringstream out;
  out << "# columns: path_id, grid time, Y, Z (dW-integrand), U at each jump node; basis " << sol.basis_spec << "\n";
  out << "path_id,t,Y,Z";
  for (std::size_t j = 0; j < sol.nodes.size(); ++j) out << ",U(" << format_number(sol.nodes.sizes[j]) << ")";
  out << "\n";
  const std::size_t n = sol.steps();
  for (std::size_t p = 0; p < sol.paths(); ++p) {
    const auto r = static_cast<Eigen::Index>(p);
    for (std::size_t i = 0; i <= n; ++i) {
      const auto c = static_cast<Eigen::Index>(i);
      out << p << "," << format_number(sol.grid->time(i)) << "," << format_number(sol.Y(r, c)) << ",";
      if (i < n) out << format_number(sol.Z(r, c));
      for (std::size_t j = 0; j < sol.U.size(); ++j) {
        out << ",";
        if (i < n) out << format_number(sol.U[j](r, c));
      }
      out << "\n";
    }
  }
  return out.str();
}

std::string residual_csv(const ResidualReport& report) {
  std::ostringstream out;
  out << "# columns: base point (r, v), grid index of the right limit, relative residual, sample size, tolerance, pass\n";
  out << "r,v,index,residual,sample_size,tolerance,pass\n";
  for (const auto& row : report.rows) {
    out << format_number(row.r) << "," << format_number(row.v) << "," << row.index << "," << format_number(row.residual)
        << "," << row.sample_size << "," << format_number(row.tolerance) << "," << (row.pass ? 1 : 0) << "\n";
  }
  return out.str();
}

void write_report(const std::vector<ExperimentResult>& results, const fs::path& dir, const RunMetadata& meta) {
  for (const auto& r : results) write_file(dir / (r.name + ".csv"), experiment_csv(r, meta));
  write_file(dir / "checks.csv", checks_csv(results, meta));
  write_file(dir / "summary.txt", summary_text(results, meta));
}

}  // namespace levymal
