#include "optweights/csv_io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <vector>

#include "json.hpp"

namespace optw {

namespace {

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

std::string at_line(std::size_t line) { return " (line " + std::to_string(line) + ")"; }

}  // namespace

std::string format_double(double x) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

std::optional<double> parse_double(std::string_view field) {
  if (!field.empty() && field.front() == '+') field.remove_prefix(1);
  if (field.empty()) return std::nullopt;
  double value = 0.0;
  const auto res = std::from_chars(field.data(), field.data() + field.size(), value);
  if (res.ec != std::errc() || res.ptr != field.data() + field.size()) return std::nullopt;
  return value;
}

std::string dataset_to_csv(const GroupedDataset& data) {
  std::string out = "y,g";
  for (Index j = 0; j < data.dim(); ++j) out += ",x" + std::to_string(j);
  out += '\n';
  for (Index i = 0; i < data.size(); ++i) {
    out += format_double(data.targets()[i]);
    out += ',';
    out += std::to_string(data.group(i));
    for (Index j = 0; j < data.dim(); ++j) {
      out += ',';
      out += format_double(data.features()(i, j));
    }
    out += '\n';
  }
  return out;
}

void write_dataset_csv(const std::filesystem::path& path, const GroupedDataset& data) {
  write_file_atomic(path, dataset_to_csv(data));
}

GroupedDataset parse_dataset_csv(std::string_view text, std::optional<int> num_groups) {
  std::vector<std::string_view> lines;
  {
    std::size_t start = 0;
    while (start < text.size()) {
      std::size_t nl = text.find('\n', start);
      if (nl == std::string_view::npos) nl = text.size();
      std::string_view line = text.substr(start, nl - start);
      if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
      lines.push_back(line);
      start = nl + 1;
    }
  }
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  require(!lines.empty(), ErrorKind::SchemaError, "csv: empty file, expected header y,g,x0,...");

  const auto header = split_fields(lines[0]);
  require(header.size() >= 3, ErrorKind::SchemaError,
          "csv: header needs y, g and at least one feature column" + at_line(1));
  require(header[0] == "y" && header[1] == "g", ErrorKind::SchemaError,
          "csv: header must start with y,g" + at_line(1));
  const auto d = static_cast<Index>(header.size() - 2);
  for (Index j = 0; j < d; ++j) {
    require(header[static_cast<std::size_t>(j + 2)] == "x" + std::to_string(j),
            ErrorKind::SchemaError,
            "csv: expected column x" + std::to_string(j) + at_line(1));
  }

  const auto n = static_cast<Index>(lines.size() - 1);
  require(n >= 1, ErrorKind::SchemaError, "csv: no data rows");
  Eigen::MatrixXd x(n, d);
  Eigen::VectorXd y(n);
  std::vector<int> groups(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    const std::size_t line_no = static_cast<std::size_t>(i) + 2;
    const auto fields = split_fields(lines[static_cast<std::size_t>(i) + 1]);
    require(fields.size() == header.size(), ErrorKind::SchemaError,
            "csv: expected " + std::to_string(header.size()) + " columns, found " +
                std::to_string(fields.size()) + at_line(line_no));
    std::vector<double> values(fields.size());
    for (std::size_t k = 0; k < fields.size(); ++k) {
      const auto v = parse_double(fields[k]);
      require(v.has_value(), ErrorKind::ParseError,
              "csv: cannot parse '" + std::string(fields[k]) + "'" + at_line(line_no));
      require(std::isfinite(*v), ErrorKind::ValueError, "csv: non-finite value" + at_line(line_no));
      values[k] = *v;
    }
    require(values[0] == 0.0 || values[0] == 1.0, ErrorKind::ValueError,
            "csv: y must be 0 or 1" + at_line(line_no));
    require(values[1] >= 1.0 && values[1] == std::floor(values[1]) && values[1] <= 1e9,
            ErrorKind::ValueError, "csv: g must be a positive integer" + at_line(line_no));
    y[i] = values[0];
    groups[static_cast<std::size_t>(i)] = static_cast<int>(values[1]);
    for (Index j = 0; j < d; ++j) x(i, j) = values[static_cast<std::size_t>(j + 2)];
  }
  if (num_groups) return GroupedDataset(std::move(x), std::move(y), std::move(groups), *num_groups);
  return GroupedDataset(std::move(x), std::move(y), std::move(groups));
}

GroupedDataset load_csv(const std::filesystem::path& path, std::optional<int> num_groups) {
  return parse_dataset_csv(read_text_file(path), num_groups);
}

std::string shift_to_json(const ShiftSpec& shift) {
  nlohmann::json j;
  j["p_train"] = std::vector<double>(shift.p_train().data(),
                                     shift.p_train().data() + shift.p_train().size());
  j["p_test"] = std::vector<double>(shift.p_test().data(),
                                    shift.p_test().data() + shift.p_test().size());
  return j.dump() + "\n";
}

ShiftSpec shift_from_json(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::ParseError, std::string("shift json: ") + e.what());
  }
  require(j.is_object() && j.contains("p_train") && j.contains("p_test"), ErrorKind::SchemaError,
          "shift json: expected object with p_train and p_test");
  auto to_vec = [](const nlohmann::json& arr, const char* key) {
    require(arr.is_array(), ErrorKind::SchemaError, std::string("shift json: ") + key +
                                                        " must be an array");
    Eigen::VectorXd v(static_cast<Index>(arr.size()));
    for (std::size_t k = 0; k < arr.size(); ++k) {
      require(arr[k].is_number(), ErrorKind::SchemaError,
              std::string("shift json: ") + key + " must hold numbers");
      v[static_cast<Index>(k)] = arr[k].get<double>();
    }
    return v;
  };
  return ShiftSpec(to_vec(j["p_train"], "p_train"), to_vec(j["p_test"], "p_test"));
}

ShiftSpec load_shift(const std::filesystem::path& path) {
  return shift_from_json(read_text_file(path));
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorKind::IoError, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const std::filesystem::path& path, std::string_view content) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    require(out.good(), ErrorKind::IoError, "cannot write " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    require(out.good(), ErrorKind::IoError, "write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  require(!ec, ErrorKind::IoError, "cannot rename " + tmp.string() + ": " + ec.message());
}

}  // namespace optw
