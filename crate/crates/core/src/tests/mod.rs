//! Cross-module properties checked against brute force and closed forms.

mod dimension;
mod properties;
