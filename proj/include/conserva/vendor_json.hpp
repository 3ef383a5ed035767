// Single include point for the vendored nlohmann/json header so the rest of
// the tree doesn't repeat the path.
#pragma once
#include <json.hpp>
