#include "sparsecl/lambda_select.hpp"

#include <string>

namespace sparsecl {

SelectionKind selection_kind_from_string(std::string_view name) {
    if (name == "trace") return SelectionKind::TraceRatio;
    if (name == "relative") return SelectionKind::RelativeTolerance;
    throw ConfigError("unknown selection rule '" + std::string(name) + "' (expected trace or relative)");
}

}  // namespace sparsecl
