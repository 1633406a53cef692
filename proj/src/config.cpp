#include "lhmaploc/config.hpp"

#include "lhmaploc/error.hpp"
#include "lhmaploc/mapstore.hpp"

#include <charconv>

namespace lhm {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_value(const std::string& key, const std::string& text) {
  T v{};
  const char* end = text.data() + text.size();
  auto [p, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || p != end) throw Error(ErrorCode::kParse, "config: bad value for " + key + ": '" + text + "'");
  return v;
}

}  // namespace

std::map<std::string, std::string> parse_key_values(std::string_view text) {
  std::map<std::string, std::string> out;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const std::size_t nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = "config line " + std::to_string(line_no);
    if (eq == std::string_view::npos) throw Error(ErrorCode::kParse, where + ": expected key=value");
    const std::string key(trim(line.substr(0, eq)));
    if (key.empty()) throw Error(ErrorCode::kParse, where + ": empty key");
    if (!out.emplace(key, std::string(trim(line.substr(eq + 1)))).second) {
      throw Error(ErrorCode::kParse, where + ": repeated key " + key);
    }
  }
  return out;
}

TrainConfig train_config_from(const std::map<std::string, std::string>& kv, TrainConfig base,
                              const std::set<std::string>& extra_keys) {
  for (const auto& [key, value] : kv) {
    if (key == "epochs") base.epochs = parse_value<int>(key, value);
    else if (key == "batch") base.batch = parse_value<int>(key, value);
    else if (key == "lr") base.lr = parse_value<double>(key, value);
    else if (key == "lambda") base.lambda = parse_value<double>(key, value);
    else if (key == "alpha") base.alpha = parse_value<double>(key, value);
    else if (key == "beta") base.beta = parse_value<double>(key, value);
    else if (key == "topn") base.topn = parse_value<std::uint32_t>(key, value);
    else if (key == "noise_level") base.noise_level = parse_value<int>(key, value);
    else if (key == "seed") base.seed = parse_value<std::uint64_t>(key, value);
    else if (key == "draws") base.draws = parse_value<int>(key, value);
    else if (!extra_keys.count(key)) throw Error(ErrorCode::kParse, "config: unknown key " + key);
  }
  base.validate();
  return base;
}

TrainConfig load_train_config(const std::filesystem::path& path, TrainConfig base) {
  const auto bytes = read_file(path);
  return train_config_from(parse_key_values(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size())),
                           base);
}

}  // namespace lhm
