#pragma once

// Chain files: one CSV row per recorded draw (columns in Chain order) plus a
// sidecar "<file>.meta" of key=value lines describing layout and config.

#include <filesystem>
#include <string>

#include "ha/gibbs.hpp"
#include "ha/io.hpp"

namespace ha {

std::string chain_csv(const Chain& chain);
std::string chain_metadata(const Chain& chain);

std::filesystem::path metadata_path(const std::filesystem::path& chain_file);

void write_chain(const Chain& chain, const std::filesystem::path& path);
/// Reads a chain written by write_chain. Throws InputError on malformed files.
Chain read_chain(const std::filesystem::path& path);

std::string prior_name(PriorKind prior);

}  // namespace ha
