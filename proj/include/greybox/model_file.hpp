#pragma once

#include <string>
#include <string_view>

#include "greybox/model.hpp"

namespace greybox {

/// Parse the line-oriented model format:
///
///   system  d<state> ~ <expr>
///   obs     <output> ~ <expr>
///   obsvar  <pair>   ~ <expr>
///   input   <ident>[, <ident>...]
///   param   <ident> = init=<num>[, lower=<num>, upper=<num>]
///
/// '#' starts a comment. Errors are ModelError prefixed with "<source>:<line>: ".
ModelSpec parse_model(std::string_view text, const std::string& source = "<model>");

ModelSpec load_model_file(const std::string& path);

}  // namespace greybox
