/*
 * styleseg: MRI glioma segmentation with style-transfer augmentation
 *
 * Copyright 2026 styleseg contributors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "styleseg/descriptor.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include <json.hpp>

#include "styleseg/nifti.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace styleseg {

std::vector<std::string> DatasetDescriptor::case_ids() const {
  std::vector<std::string> ids;
  ids.reserve(cases.size());
  for (const auto& c : cases) ids.push_back(c.id);
  return ids;
}

const CaseEntry& DatasetDescriptor::entry(const std::string& id) const {
  for (const auto& c : cases) {
    if (c.id == id) return c;
  }
  throw DataError("dataset '" + name + "': no case with id " + id);
}

size_t DatasetDescriptor::count_domain(const std::string& domain) const {
  return static_cast<size_t>(std::count_if(
      cases.begin(), cases.end(),
      [&](const CaseEntry& c) { return c.domain == domain; }));
}

DatasetDescriptor parse_descriptor_json(const std::string& text,
                                        const std::string& base_dir,
                                        bool check_paths) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw DataError(std::string("descriptor: invalid JSON: ") + e.what());
  }
  if (!j.is_object() || !j.contains("cases") || !j["cases"].is_array())
    throw DataError("descriptor: expected object with a 'cases' array");

  DatasetDescriptor d;
  d.name = j.value("name", std::string("unnamed"));
  d.base_dir = base_dir;

  std::set<std::string> seen;
  for (const auto& jc : j["cases"]) {
    CaseEntry e;
    if (!jc.contains("id") || !jc["id"].is_string())
      throw DataError("descriptor: case without string id");
    e.id = jc["id"].get<std::string>();
    if (!seen.insert(e.id).second)
      throw DataError("descriptor: duplicate case id " + e.id);
    e.domain = jc.value("domain", std::string());
    if (!valid_domain(e.domain))
      throw DataError("descriptor: case " + e.id + ": unknown domain '" + e.domain + "'");
    if (!jc.contains("channels") || !jc["channels"].is_object())
      throw DataError("descriptor: case " + e.id + ": missing channels object");
    for (const auto& name : channel_names()) {
      if (!jc["channels"].contains(name))
        throw DataError("descriptor: case " + e.id + ": missing channel " + name);
      e.channels[name] = jc["channels"][name].get<std::string>();
    }
    if (jc.contains("truth") && !jc["truth"].is_null())
      e.truth = jc["truth"].get<std::string>();
    d.cases.push_back(std::move(e));
  }

  std::sort(d.cases.begin(), d.cases.end(),
            [](const CaseEntry& a, const CaseEntry& b) { return a.id < b.id; });

  if (check_paths) {
    for (const auto& e : d.cases) {
      for (const auto& [ch, rel] : e.channels) {
        const fs::path p = fs::path(base_dir) / rel;
        if (!fs::exists(p))
          throw DataError("descriptor: case " + e.id + ": channel " + ch +
                          " path does not exist: " + p.string());
      }
      if (e.truth) {
        const fs::path p = fs::path(base_dir) / *e.truth;
        if (!fs::exists(p))
          throw DataError("descriptor: case " + e.id +
                          ": truth path does not exist: " + p.string());
      }
    }
  }
  return d;
}

DatasetDescriptor load_descriptor(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("descriptor: cannot open " + path);
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return parse_descriptor_json(text, fs::path(path).parent_path().string(), true);
}

void save_descriptor(const DatasetDescriptor& d, const std::string& path) {
  json j;
  j["name"] = d.name;
  j["cases"] = json::array();
  for (const auto& e : d.cases) {
    json jc;
    jc["id"] = e.id;
    jc["domain"] = e.domain;
    jc["channels"] = json::object();
    for (const auto& [ch, rel] : e.channels) jc["channels"][ch] = rel;
    jc["truth"] = e.truth ? json(*e.truth) : json(nullptr);
    j["cases"].push_back(jc);
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("descriptor: cannot write " + path);
  out << j.dump(2) << "\n";
}

CaseVolume load_case(const DatasetDescriptor& d, const CaseEntry& entry) {
  CaseVolume c;
  c.id = entry.id;
  c.domain = entry.domain;
  for (size_t i = 0; i < channel_names().size(); ++i) {
    const auto& name = channel_names()[i];
    const fs::path p = fs::path(d.base_dir) / entry.channels.at(name);
    c.channels[i] = read_nifti_image(p.string());
  }
  if (entry.truth) {
    const fs::path p = fs::path(d.base_dir) / *entry.truth;
    c.truth = read_nifti_labels(p.string());
  }
  c.validate();
  return c;
}

CaseEntry save_case(const CaseVolume& c, const std::string& dir) {
  c.validate();
  fs::create_directories(dir);
  CaseEntry e;
  e.id = c.id;
  e.domain = c.domain;
  for (size_t i = 0; i < channel_names().size(); ++i) {
    const std::string leaf = c.id + "_" + channel_names()[i] + ".nii";
    write_nifti(c.channels[i], (fs::path(dir) / leaf).string());
    e.channels[channel_names()[i]] = leaf;
  }
  if (c.truth) {
    const std::string leaf = c.id + "_seg.nii";
    write_nifti(*c.truth, (fs::path(dir) / leaf).string());
    e.truth = leaf;
  }
  return e;
}

}  // namespace styleseg
