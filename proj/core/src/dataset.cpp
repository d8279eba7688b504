#include "diffcod/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include "diffcod/errors.hpp"
#include "diffcod/image_io.hpp"

namespace diffcod {

namespace fs = std::filesystem;

namespace {

fs::path resolve(const fs::path& dir, const std::string& stem,
                 const std::vector<std::string>& extensions, const char* what) {
  std::vector<fs::path> hits;
  for (const auto& ext : extensions) {
    fs::path p = dir / (stem + ext);
    if (fs::is_regular_file(p)) hits.push_back(std::move(p));
  }
  if (hits.empty()) throw IoError(std::string("missing ") + what + " file for stem '" + stem + "'");
  if (hits.size() > 1) {
    throw IoError(std::string("ambiguous ") + what + " file for stem '" + stem + "'");
  }
  return hits.front();
}

}  // namespace

DatasetSpec DatasetSpec::open(const fs::path& root, const fs::path& manifest) {
  DatasetSpec spec;
  spec.root = root;
  if (!fs::is_directory(root / spec.gt_dir) || !fs::is_directory(root / spec.image_dir)) {
    throw IoError("dataset root " + root.string() + " lacks Imgs/ and GT/ directories");
  }
  if (!manifest.empty()) {
    const bool as_given = manifest.is_absolute() || fs::exists(manifest);
    spec.stems = read_manifest(as_given ? manifest : root / manifest);
  } else {
    std::set<std::string> stems;
    for (const auto& entry : fs::directory_iterator(root / spec.gt_dir)) {
      if (!entry.is_regular_file()) continue;
      const auto ext = entry.path().extension().string();
      if (std::find(spec.extensions.begin(), spec.extensions.end(), ext) != spec.extensions.end()) {
        stems.insert(entry.path().stem().string());
      }
    }
    spec.stems.assign(stems.begin(), stems.end());
  }
  for (const auto& stem : spec.stems) {
    spec.image_path(stem);
    spec.gt_path(stem);
  }
  return spec;
}

fs::path DatasetSpec::image_path(const std::string& stem) const {
  return resolve(root / image_dir, stem, extensions, "image");
}

fs::path DatasetSpec::gt_path(const std::string& stem) const {
  return resolve(root / gt_dir, stem, extensions, "GT");
}

ImageMaskPair load_pair(const DatasetSpec& spec, const std::string& stem) {
  ImageMaskPair pair{read_image(spec.image_path(stem)), read_mask(spec.gt_path(stem))};
  if (pair.image.dim(1) != pair.mask.dim(1) || pair.image.dim(2) != pair.mask.dim(2)) {
    throw IoError("image and GT sizes differ for stem '" + stem + "'");
  }
  return pair;
}

std::vector<std::string> read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read manifest " + path.string());
  std::vector<std::string> stems;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    if (!line.empty()) stems.push_back(line);
  }
  return stems;
}

void write_manifest(const fs::path& path, const std::vector<std::string>& stems) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest " + path.string());
  for (const auto& s : stems) out << s << '\n';
}

}  // namespace diffcod
