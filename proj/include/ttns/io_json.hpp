#pragma once

// JSON views of library objects (topology dumps, reports). Kept separate from
// the core headers so that hot translation units do not pay for the JSON
// parser.

#include <nlohmann/json.hpp>

#include "ttns/topology.hpp"

namespace ttns {

using json = nlohmann::json;

inline json topology_to_json(const TreeTopology& topo) {
  json j;
  j["schema_version"] = 1;
  j["Lx"] = topo.Lx;
  j["Ly"] = topo.Ly;
  j["orientation"] = to_string(topo.orientation);
  j["n_sites"] = topo.n_sites();
  json nodes = json::array();
  for (const TreeNode& n : topo.nodes) {
    json jn;
    jn["id"] = n.id;
    jn["layer"] = n.layer;
    jn["parent"] = n.parent < 0 ? json(nullptr) : json(n.parent);
    if (n.is_leaf()) {
      jn["leaf"] = true;
      jn["site"] = n.site;
    } else {
      jn["children"] = {n.children[0], n.children[1]};
    }
    jn["rect"] = {n.rect.x0, n.rect.y0, n.rect.w, n.rect.h};
    nodes.push_back(std::move(jn));
  }
  j["nodes"] = std::move(nodes);
  json links = json::array();
  for (const LinkInfo& l : topo.links)
    links.push_back({{"id", l.id}, {"lower", l.lower}, {"upper", l.upper}});
  j["links"] = std::move(links);
  j["leaf_of_site"] = topo.leaf_of_site;
  return j;
}

}  // namespace ttns
