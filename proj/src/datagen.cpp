#include "sltlab/datagen.hpp"

#include <stdexcept>

#include <json.hpp>

#include "sltlab/io.hpp"

namespace sltlab {

Dataset generate(const TrueProcess& truth, std::size_t n, std::uint64_t seed) {
  if (n == 0) throw std::invalid_argument("generate: n must be >= 1");
  const std::size_t m = truth.q().dim();
  const std::size_t no = truth.n_out();
  Dataset data{.n = n, .m_in = m, .n_out = no, .seed = seed, .xs = std::vector<double>(n * m),
               .ys = std::vector<double>(n * no)};
  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    std::span<double> x(data.xs.data() + i * m, m);
    std::span<double> y(data.ys.data() + i * no, no);
    truth.q().sample(rng, x);
    truth.r0(x, y);
    for (std::size_t k = 0; k < no; ++k) y[k] += truth.sigma() * rng.normal();
  }
  return data;
}

std::filesystem::path sidecar_path(const std::filesystem::path& csv) {
  auto p = csv;
  p += ".json";
  return p;
}

void save_dataset(const std::filesystem::path& csv, const Dataset& data, const std::string& model_id,
                  double sigma) {
  CsvTable table;
  for (std::size_t j = 0; j < data.m_in; ++j) table.header.push_back("x_" + std::to_string(j + 1));
  for (std::size_t k = 0; k < data.n_out; ++k) table.header.push_back("y_" + std::to_string(k + 1));
  table.rows.reserve(data.n);
  for (std::size_t i = 0; i < data.n; ++i) {
    std::vector<double> row(data.x(i).begin(), data.x(i).end());
    row.insert(row.end(), data.y(i).begin(), data.y(i).end());
    table.add_numeric_row(row);
  }
  write_csv(csv, table);

  nlohmann::json meta = {{"n", data.n}, {"seed", data.seed}, {"model", model_id}, {"sigma", sigma}};
  write_text(sidecar_path(csv), meta.dump(2) + "\n");
}

Dataset load_dataset(const std::filesystem::path& csv, DatasetSidecar* sidecar) {
  const CsvTable table = read_csv(csv);
  std::size_t m = 0, no = 0;
  for (const auto& h : table.header) {
    if (h.starts_with("x_")) {
      ++m;
    } else if (h.starts_with("y_")) {
      ++no;
    } else {
      throw SchemaError("unexpected dataset column '" + h + "'");
    }
  }
  if (m == 0 || no == 0) throw SchemaError("dataset needs x_ and y_ columns");

  Dataset data{.n = table.rows.size(), .m_in = m, .n_out = no};
  std::vector<std::size_t> xcol, ycol;
  for (std::size_t j = 0; j < m; ++j) xcol.push_back(table.column("x_" + std::to_string(j + 1)));
  for (std::size_t k = 0; k < no; ++k) ycol.push_back(table.column("y_" + std::to_string(k + 1)));
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    for (std::size_t c : xcol) data.xs.push_back(table.number(r, c));
    for (std::size_t c : ycol) data.ys.push_back(table.number(r, c));
  }

  const auto side = sidecar_path(csv);
  if (std::filesystem::exists(side)) {
    const auto meta = nlohmann::json::parse(read_text(side));
    data.seed = meta.at("seed").get<std::uint64_t>();
    if (meta.at("n").get<std::size_t>() != data.n) throw SchemaError("sidecar n does not match csv rows");
    if (sidecar) {
      *sidecar = {.n = data.n, .seed = data.seed, .model = meta.at("model").get<std::string>(),
                  .sigma = meta.at("sigma").get<double>()};
    }
  }
  return data;
}

}  // namespace sltlab
