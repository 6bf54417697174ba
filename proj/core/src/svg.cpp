namespace gnnflavors {}
