#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "nco/decode/decode.hpp"
#include "nco/oracle/oracle.hpp"
#include "nco/search/search.hpp"
#include "nco/train/trainer.hpp"

using namespace nco;
namespace fs = std::filesystem;

namespace {

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  for (std::string cell; std::getline(ss, cell, sep);) out.push_back(cell);
  return out;
}

// instance_id -> reference value, from a CSV with an instance_id column and a
// cost or bks column.
std::map<std::string, double> read_bks(const std::string& path) {
  std::istringstream in(read_text(path));
  std::string line;
  if (!std::getline(in, line)) fail(ErrorCode::MalformedSection, path + " is empty");
  const auto head = split(line, ',');
  const auto id = std::find(head.begin(), head.end(), "instance_id");
  auto val = std::find(head.begin(), head.end(), "bks");
  if (val == head.end()) val = std::find(head.begin(), head.end(), "cost");
  if (id == head.end() || val == head.end())
    fail(ErrorCode::MalformedSection, path + " needs instance_id and cost (or bks) columns");
  const auto i = static_cast<std::size_t>(id - head.begin()), j = static_cast<std::size_t>(val - head.begin());
  std::map<std::string, double> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split(line, ',');
    if (cells.size() <= std::max(i, j)) fail(ErrorCode::MalformedSection, path + ": short row '" + line + "'");
    try {
      out[cells[i]] = std::stod(cells[j]);
    } catch (const std::exception&) {
      fail(ErrorCode::TypeError, path + ": value '" + cells[j] + "' is not a number");
    }
  }
  return out;
}

OracleResult solve_exact(const InstanceBatch& in, Index row) {
  if (in.env == EnvId::TSP && in.nodes() <= kHeldKarpMaxNodes) return held_karp(in, row);
  return brute_force(in, row);
}

// Rows are appended; the header is written only to a new or empty file.
std::ofstream open_csv(const std::string& path, const std::string& header) {
  const bool fresh = !fs::exists(path) || fs::file_size(path) == 0;
  std::ofstream out(path, std::ios::app);
  if (!out) fail(ErrorCode::Io, "cannot write " + path);
  if (fresh) out << header << '\n';
  return out;
}

void write_rows(const std::string& path, const std::vector<EvalRow>& rows) {
  std::ostringstream ss;
  write_eval_csv(ss, rows);
  const std::string text = ss.str();
  const auto nl = text.find('\n');
  std::ofstream out = open_csv(path, text.substr(0, nl));
  out << text.substr(nl + 1);
}

struct Problems {
  InstanceBatch batch;
  std::vector<std::string> ids;
  std::vector<ParsedInstance> parsed;  // benchmark files only
};

Problems load_problems(const std::vector<std::string>& paths) {
  Problems p;
  const auto ext = [](const std::string& s) { return fs::path(s).extension().string(); };
  if (paths.size() == 1 && ext(paths[0]) != ".tsp" && ext(paths[0]) != ".vrp") {
    p.batch = read_dataset(paths[0]);
    for (Index b = 0; b < p.batch.batch(); ++b) p.ids.push_back(std::to_string(b));
    return p;
  }
  std::vector<InstanceBatch> parts;
  for (const auto& path : paths) {
    if (ext(path) != ".tsp" && ext(path) != ".vrp")
      fail(ErrorCode::InvalidConfig, "benchmark files must end in .tsp or .vrp: " + path);
    ParsedInstance inst = ext(path) == ".tsp" ? parse_tsplib(read_text(path)) : parse_cvrplib(read_text(path));
    if (!parts.empty() && inst.instance.nodes() != parts[0].nodes())
      fail(ErrorCode::ShapeMismatch, "benchmark files of different sizes must be evaluated separately");
    p.ids.push_back(inst.name);
    parts.push_back(inst.instance);
    p.parsed.push_back(std::move(inst));
  }
  p.batch = concat_batches(parts);
  return p;
}

// Objective per instance in the instance's own units.
std::vector<double> objectives(const Problems& p, const TensorI& actions) {
  std::vector<double> out;
  const Index t = actions.dim(1);
  for (Index b = 0; b < p.batch.batch(); ++b) {
    const std::int32_t* a = actions.data() + b * t;
    out.push_back(p.parsed.empty() ? objective(p.batch, b, a, t) : tsplib_cost(p.parsed[b], a, t));
  }
  return out;
}

std::vector<double> references(const Problems& p, const std::string& bks) {
  std::vector<double> ref;
  if (bks.empty()) return ref;
  if (bks == "oracle") {
    for (Index b = 0; b < p.batch.batch(); ++b) {
      const OracleResult r = solve_exact(p.batch, b);
      ref.push_back(p.parsed.empty() ? r.value
                                     : tsplib_cost(p.parsed[b], r.actions.data(),
                                                   static_cast<Index>(r.actions.size())));
    }
    return ref;
  }
  const auto table = read_bks(bks);
  for (const auto& id : p.ids) {
    auto it = table.find(id);
    if (it == table.end()) fail(ErrorCode::MissingRequired, "no best-known value for instance " + id + " in " + bks);
    ref.push_back(it->second);
  }
  return ref;
}

void summarize(const std::string& label, const std::vector<EvalRow>& rows, bool with_gap) {
  double cost = 0.0, g = 0.0, secs = 0.0;
  for (const auto& r : rows) {
    cost += r.cost;
    g += r.gap_pct;
    secs += r.seconds;
  }
  const double n = static_cast<double>(std::max<std::size_t>(rows.size(), 1));
  std::cout << std::fixed << std::setprecision(4) << label << "  cost " << cost / n;
  if (with_gap) std::cout << "  gap " << std::setprecision(2) << g / n << "%";
  std::cout << "  time " << std::setprecision(2) << secs << "s\n";
}

std::vector<EvalRow> make_rows(const Problems& p, const std::string& scheme, const std::vector<double>& cost,
                               const std::vector<double>& ref, Index samples, double seconds) {
  std::vector<EvalRow> rows;
  const bool max = maximize(p.batch.env);
  for (std::size_t b = 0; b < cost.size(); ++b) {
    EvalRow r;
    r.instance = p.ids[b];
    r.scheme = scheme;
    r.cost = cost[b];
    r.gap_pct = ref.empty() ? 0.0 : gap(cost[b], ref[b], max);
    r.samples = samples;
    r.seconds = seconds / static_cast<double>(cost.size());
    rows.push_back(r);
  }
  return rows;
}

Policy<float> checkpoint_policy(const std::string& path, EnvId env) {
  Policy<float> policy = policy_from_checkpoint(read_ncof(path));
  if (policy.config().env != env)
    fail(ErrorCode::ShapeMismatchOnLoad, "checkpoint is for " + std::string(env_name(policy.config().env)) +
                                             ", dataset is " + std::string(env_name(env)));
  return policy;
}

// ---- plot ------------------------------------------------------------------------

struct Series {
  std::string name;
  std::vector<double> x, y;
};

Series read_metrics(const std::string& path) {
  std::istringstream in(read_text(path));
  std::string line;
  std::getline(in, line);
  const auto head = split(line, ',');
  const auto col = [&](const char* name) {
    const auto it = std::find(head.begin(), head.end(), name);
    if (it == head.end()) fail(ErrorCode::MalformedSection, path + " has no " + name + " column");
    return static_cast<std::size_t>(it - head.begin());
  };
  const std::size_t ce = col("epoch"), cv = col("val_cost");
  Index per_epoch = 0;
  const fs::path cfg = fs::path(path).parent_path() / "config.yaml";
  if (fs::exists(cfg)) per_epoch = load_config({cfg.string()}).epoch_size();
  Series s;
  s.name = fs::path(path).parent_path().filename().string();
  if (s.name.empty()) s.name = fs::path(path).stem().string();
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split(line, ',');
    const double epoch = std::stod(cells.at(ce));
    s.x.push_back(per_epoch ? (epoch + 1) * static_cast<double>(per_epoch) : epoch + 1);
    s.y.push_back(std::stod(cells.at(cv)));
  }
  return s;
}

std::string svg_chart(const std::vector<Series>& series, const std::string& xlabel) {
  const double W = 640, H = 400, L = 70, R = 150, T = 20, B = 50;
  double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
  for (const auto& s : series)
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) y1 = y0 + 1;
  const auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  const auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };
  static const char* colors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"};
  std::ostringstream o;
  o << std::fixed << std::setprecision(2);
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  o << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double xv = x0 + (x1 - x0) * k / 4, yv = y0 + (y1 - y0) * k / 4;
    o << "<text x=\"" << px(xv) << "\" y=\"" << H - B + 15 << "\" text-anchor=\"middle\">" << std::setprecision(0) << xv
      << "</text>\n";
    o << "<text x=\"" << L - 5 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\">" << std::setprecision(3) << yv
      << "</text>\n" << std::setprecision(2);
  }
  o << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 10 << "\" text-anchor=\"middle\">" << xlabel << "</text>\n";
  o << "<text x=\"15\" y=\"" << (T + H - B) / 2 << "\" transform=\"rotate(-90 15 " << (T + H - B) / 2
    << ")\" text-anchor=\"middle\">validation cost</text>\n";
  for (std::size_t i = 0; i < series.size(); ++i) {
    const auto& s = series[i];
    const char* c = colors[i % 6];
    o << "<polyline fill=\"none\" stroke=\"" << c << "\" stroke-width=\"2\" points=\"";
    for (std::size_t k = 0; k < s.x.size(); ++k) o << px(s.x[k]) << ',' << py(s.y[k]) << ' ';
    o << "\"/>\n";
    o << "<text x=\"" << W - R + 10 << "\" y=\"" << T + 15 * (i + 1) << "\" fill=\"" << c << "\">" << s.name
      << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Neural combinatorial optimization: generate, train, evaluate and search routing policies"};
  app.require_subcommand(1);
  std::uint64_t seed = 1234;

  auto* gen = app.add_subcommand("generate", "write a seeded instance dataset");
  std::string env_name_arg, out;
  Index n = 20, count = 1000;
  gen->add_option("--env", env_name_arg, "tsp, cvrp, op, pctsp or pdp")->required();
  gen->add_option("--n", n, "problem size")->required();
  gen->add_option("--count", count, "number of instances")->required();
  gen->add_option("--seed", seed, "generator seed");
  gen->add_option("--out", out, "output .ncof")->required();

  auto* train = app.add_subcommand("train", "train a policy");
  std::vector<std::string> configs, sets;
  std::string preset, run_dir, resume;
  Index epochs_now = -1;
  train->add_option("--config", configs, "YAML config files, later files win");
  train->add_option("--set", sets, "dotted.key=value overrides");
  train->add_option("--preset", preset, "am, am-lr1e-3, pomo, symnco, amxl, a2c or ppo");
  train->add_option("--run-dir", run_dir, "output directory");
  train->add_option("--resume", resume, "checkpoint to continue from");
  train->add_option("--epochs", epochs_now, "stop after this many epochs in this invocation");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint under a decoding scheme");
  std::string checkpoint, scheme = "greedy", bks;
  std::vector<std::string> datasets;
  eval->add_option("--checkpoint", checkpoint)->required();
  eval->add_option("--dataset", datasets, ".ncof dataset or .tsp/.vrp benchmark files")->required();
  eval->add_option("--scheme", scheme, "greedy | sampling:M | multistart[:N] | augmentation:K | ms_aug[:K]");
  eval->add_option("--bks", bks, "best-known CSV (instance_id,cost) or 'oracle'");
  eval->add_option("--out", out, "CSV to append rows to");
  eval->add_option("--seed", seed, "sampling and augmentation seed");

  auto* search = app.add_subcommand("search", "test-time search (active search or EAS)");
  std::string method;
  Index iters = 200;
  search->add_option("--method", method, "as or eas")->required()->check(CLI::IsMember({"as", "eas"}));
  search->add_option("--checkpoint", checkpoint)->required();
  search->add_option("--dataset", datasets)->required();
  search->add_option("--iters", iters, "iterations");
  search->add_option("--bks", bks, "best-known CSV or 'oracle'");
  search->add_option("--out", out, "CSV to append rows to");
  search->add_option("--seed", seed, "search seed");

  auto* oracle = app.add_subcommand("oracle", "exact solutions for small instances");
  oracle->add_option("--env", env_name_arg)->required();
  oracle->add_option("--dataset", datasets)->required();
  oracle->add_option("--out", out)->required();

  auto* plot = app.add_subcommand("plot", "validation cost curves as tidy CSV and SVG");
  std::vector<std::string> metrics;
  plot->add_option("--metrics", metrics, "metrics.csv files")->required();
  plot->add_option("--out", out, "output prefix (writes <out>.csv and <out>.svg)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*gen) {
      const InstanceBatch in = generate(parse_env(env_name_arg), n, count, seed);
      write_dataset(in, out);
      std::cout << "wrote " << count << " " << env_name_arg << n << " instances to " << out << "\n";
    } else if (*train) {
      if (!run_dir.empty()) sets.push_back("run.output_dir=" + run_dir);
      Trainer trainer(load_config(configs, sets, preset));
      if (!resume.empty()) trainer.resume(resume);
      std::cout << metrics_header() << '\n';
      trainer.on_epoch = [](const EpochMetrics& m) { std::cout << metrics_row(m) << std::endl; };
      trainer.fit(epochs_now >= 0 ? std::optional<Index>(epochs_now) : std::nullopt);
    } else if (*eval) {
      const Problems p = load_problems(datasets);
      Policy<float> policy = checkpoint_policy(checkpoint, p.batch.env);
      const DecodeScheme s = DecodeScheme::parse(scheme);
      const DecodeResult r = decode(policy, p.batch, s, seed);
      const auto rows = make_rows(p, s.name(), objectives(p, r.actions), references(p, bks), r.samples, r.seconds);
      if (!out.empty()) write_rows(out, rows);
      summarize(s.name(), rows, !bks.empty());
    } else if (*search) {
      const Problems p = load_problems(datasets);
      Policy<float> policy = checkpoint_policy(checkpoint, p.batch.env);
      const std::vector<double> ref = references(p, bks);
      SearchConfig c = method == "as" ? SearchConfig::active_search() : SearchConfig::eas();
      c.iterations = iters;
      c.seed = seed;
      const DecodeResult zero = decode(policy, p.batch, DecodeScheme{}, seed);
      const SearchResult r = method == "as" ? active_search(policy, p.batch, c) : eas_lay(policy, p.batch, c);
      auto rows = make_rows(p, "zero_shot", objectives(p, zero.actions), ref, 1, zero.seconds);
      const auto searched = make_rows(p, method == "as" ? "AS" : "EAS", objectives(p, r.actions), ref,
                                      1 + iters * c.augments, r.seconds);
      if (!out.empty()) {
        write_rows(out, rows);
        write_rows(out, searched);
      }
      summarize("zero_shot", rows, !bks.empty());
      summarize(method == "as" ? "AS" : "EAS", searched, !bks.empty());
    } else if (*oracle) {
      const Problems p = load_problems(datasets);
      if (p.batch.env != parse_env(env_name_arg))
        fail(ErrorCode::ShapeMismatchOnLoad, "dataset holds " + std::string(env_name(p.batch.env)) + " instances");
      std::ofstream csv(out, std::ios::trunc);
      if (!csv) fail(ErrorCode::Io, "cannot write " + out);
      csv << "instance_id,cost,nodes_explored\n" << std::setprecision(9);
      for (Index b = 0; b < p.batch.batch(); ++b) {
        const OracleResult r = solve_exact(p.batch, b);
        csv << p.ids[b] << ',' << r.value << ',' << r.explored << '\n';
      }
      std::cout << "solved " << p.batch.batch() << " instances exactly\n";
    } else if (*plot) {
      std::vector<Series> series;
      for (const auto& m : metrics) series.push_back(read_metrics(m));
      std::ofstream csv(out + ".csv", std::ios::trunc);
      if (!csv) fail(ErrorCode::Io, "cannot write " + out + ".csv");
      csv << "run,samples,val_cost\n" << std::setprecision(9);
      for (const auto& s : series)
        for (std::size_t i = 0; i < s.x.size(); ++i) csv << s.name << ',' << s.x[i] << ',' << s.y[i] << '\n';
      std::ofstream(out + ".svg", std::ios::trunc) << svg_chart(series, "training samples");
      std::cout << "wrote " << out << ".csv and " << out << ".svg\n";
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
