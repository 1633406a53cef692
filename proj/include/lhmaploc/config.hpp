#pragma once

#include "lhmaploc/offline.hpp"

#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <string_view>

namespace lhm {

/// key=value lines; '#' starts a comment, blank lines are ignored. Throws
/// kParse naming the line for a line without '=', an empty key or a repeated key.
std::map<std::string, std::string> parse_key_values(std::string_view text);

/// Overrides `base` with the training keys epochs, batch, lr, lambda, alpha,
/// beta, topn, noise_level, seed and draws. Keys outside that set and
/// `extra_keys` raise kParse; values that do not parse raise kParse naming the
/// key. The result is validated.
TrainConfig train_config_from(const std::map<std::string, std::string>& kv, TrainConfig base,
                              const std::set<std::string>& extra_keys = {});

TrainConfig load_train_config(const std::filesystem::path& path, TrainConfig base);

}  // namespace lhm
