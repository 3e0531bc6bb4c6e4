#pragma once

namespace sv3d::meshing {

// Standard 256-case marching cubes lookup tables (Bourke layout:
// corners 0-3 counterclockwise on the bottom face, 4-7 on the top,
// edges 0-11 with 8-11 vertical).
extern const int kEdgeTable[256];
extern const int kTriTable[256][16];

}  // namespace sv3d::meshing
