#pragma once

#include "lvseg/phantom.hpp"

/// Small beating phantom that keeps end-to-end tests fast.
inline lvseg::phantom::PhantomSpec small_phantom() {
  lvseg::phantom::PhantomSpec s = lvseg::phantom::suite_member("beating");
  s.name = "small";
  s.frames = 4;
  s.es_frame = 2;
  s.a = s.b = 14.0;
  s.c = 22.0;
  s.wall = 5.0;
  s.dims = {44, 44, 48};
  s.spacing = {1.2, 1.2, 1.2};
  return s;
}
